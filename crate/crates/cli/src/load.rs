//! Resolving worlds, checkpoints and policy names given on the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swarm_sar::allocserver::mission::MissionApf;
use swarm_sar::simenv::{ApfPolicy, Policy};
use swarm_sar::taskalloc::train::{load_allocator, ALLOCATOR_MODULE};
use swarm_sar::taskalloc::{optimal_makespan, AllocPolicy, GraphFixture, GreedyPolicy, PlanPolicy, RandomPolicy};
use swarm_sar::td3::train::{load_actor, ACTOR_MODULE};
use swarm_sar::world::World;
use swarm_sar_nn::Checkpoint;
use thiserror::Error;

/// Failures with a dedicated exit code.
#[derive(Debug, Error)]
pub enum Fatal {
    #[error("invalid world {name}: {reason}")]
    World { name: String, reason: String },
    #[error("checkpoint {} not found", .0.display())]
    MissingCheckpoint(PathBuf),
}

pub fn world(name: &str) -> Result<World> {
    let w = World::resolve(name).and_then(|w| w.validate().map(|_| w));
    w.map_err(|e| Fatal::World { name: name.to_string(), reason: e.to_string() }.into())
}

pub fn checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Fatal::MissingCheckpoint(path.to_path_buf()).into());
    }
    Ok(Checkpoint::load(path)?)
}

fn actor(path: &Path) -> Result<swarm_sar::guidance::GuidanceActor> {
    let ck = checkpoint(path)?;
    if ck.meta.module != ACTOR_MODULE {
        bail!("{} is a {} checkpoint, not a guidance actor", path.display(), ck.meta.module);
    }
    Ok(load_actor(&ck)?)
}

/// `apf` or a guidance checkpoint, for training-style evaluation.
pub fn guidance(spec: &str) -> Result<Box<dyn Policy>> {
    Ok(match spec {
        "apf" => Box::new(ApfPolicy),
        path => Box::new(actor(Path::new(path))?),
    })
}

/// `apf` (corridor-tuned) or a guidance checkpoint, one per UAV.
pub fn mission_guidance(spec: &str, uavs: usize) -> Result<Vec<Box<dyn Policy>>> {
    match spec {
        "apf" => Ok((0..uavs).map(|_| Box::new(MissionApf::default()) as Box<dyn Policy>).collect()),
        path => {
            let a = actor(Path::new(path))?;
            Ok((0..uavs).map(|_| Box::new(a.clone()) as Box<dyn Policy>).collect())
        }
    }
}

/// `greedy`, `random`, `plan` (makespan-optimal plan for `fixture`) or an
/// allocator checkpoint.
pub fn allocator(spec: &str, fixture: Option<&GraphFixture>, seed: u64) -> Result<Box<dyn AllocPolicy + Send>> {
    Ok(match spec {
        "greedy" => Box::new(GreedyPolicy),
        "random" => Box::new(RandomPolicy { rng: ChaCha8Rng::seed_from_u64(seed) }),
        "plan" => {
            let Some(g) = fixture else { bail!("the plan allocator needs a fixed graph") };
            Box::new(PlanPolicy::new(&optimal_makespan(g)?, &g.starts))
        }
        path => {
            let ck = checkpoint(Path::new(path))?;
            if ck.meta.module != ALLOCATOR_MODULE {
                bail!("{path} is a {} checkpoint, not an allocator", ck.meta.module);
            }
            Box::new(load_allocator(&ck)?)
        }
    })
}
