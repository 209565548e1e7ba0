//! Episodes and the replay dataset, with binary persistence so an
//! exploration dataset can be reused across adaptation runs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::diffcore::Tensor;
use crate::envs::TaskReward;
use crate::worldmodel::SequenceBatch;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"P2XEPIS\0";
const VERSION: u32 = 1;

/// One collected episode: D+1 observations, D actions, and optionally
/// one reward per observation. Rewards are absent exactly when the
/// episode was collected reward-free.
#[derive(Debug, Clone)]
pub struct Episode {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Option<Vec<f64>>,
    /// Reset seed, recorded for replay.
    pub seed: u64,
}

impl Episode {
    pub fn validate(&self) -> Result<()> {
        if self.observations.len() != self.actions.len() + 1 {
            return Err(Error::invalid(format!(
                "episode with {} observations needs {} actions, got {}",
                self.observations.len(),
                self.observations.len() - 1,
                self.actions.len()
            )));
        }
        if let Some(r) = &self.rewards {
            if r.len() != self.observations.len() {
                return Err(Error::invalid("one reward per observation"));
            }
        }
        Ok(())
    }

    pub fn decisions(&self) -> usize {
        self.actions.len()
    }
}

/// Ordered episodes plus the environment metadata needed to persist and
/// replay them. Subsequence sampling never crosses episode boundaries.
#[derive(Debug, Clone)]
pub struct ReplayDataset {
    pub episodes: Vec<Episode>,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub episode_len: usize,
    pub action_repeat: usize,
}

impl ReplayDataset {
    pub fn new(obs_dim: usize, action_dim: usize, episode_len: usize, action_repeat: usize) -> Self {
        ReplayDataset {
            episodes: Vec::new(),
            obs_dim,
            action_dim,
            episode_len,
            action_repeat,
        }
    }

    pub fn push(&mut self, episode: Episode) -> Result<()> {
        episode.validate()?;
        for o in &episode.observations {
            if o.len() != self.obs_dim {
                return Err(Error::invalid(format!(
                    "observation dim {} does not match dataset {}",
                    o.len(),
                    self.obs_dim
                )));
            }
        }
        for a in &episode.actions {
            if a.len() != self.action_dim {
                return Err(Error::invalid("action dim mismatch"));
            }
        }
        self.episodes.push(episode);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Draws `batch` subsequences of `seq_len` observations each,
    /// optionally labeling rewards with `task` on the fly (nondestructive
    /// relabeling). `prefix` restricts sampling to the first episodes,
    /// which is how snapshots see only the data that existed then.
    pub fn sample_batch(
        &self,
        rng: &mut impl Rng,
        batch: usize,
        seq_len: usize,
        task: Option<&TaskReward>,
        prefix: Option<usize>,
    ) -> SequenceBatch {
        let limit = prefix.unwrap_or(self.episodes.len()).min(self.episodes.len());
        assert!(limit > 0, "cannot sample from an empty dataset");
        let mut obs = vec![Vec::with_capacity(batch * self.obs_dim); seq_len];
        let mut acts = vec![Vec::with_capacity(batch * self.action_dim); seq_len];
        let mut rews = vec![Vec::with_capacity(batch); seq_len];
        let mut any_labels = false;
        for _ in 0..batch {
            let ep = &self.episodes[rng.gen_range(0..limit)];
            let max_start = ep.observations.len().saturating_sub(seq_len);
            let start = if max_start == 0 {
                0
            } else {
                rng.gen_range(0..=max_start)
            };
            for t in 0..seq_len {
                let g = (start + t).min(ep.observations.len() - 1);
                obs[t].extend_from_slice(&ep.observations[g]);
                if g == 0 {
                    acts[t].extend(std::iter::repeat(0.0).take(self.action_dim));
                } else {
                    acts[t].extend_from_slice(&ep.actions[g - 1]);
                }
                if let Some(task) = task {
                    let prev_action = if g == 0 {
                        vec![0.0; self.action_dim]
                    } else {
                        ep.actions[g - 1].clone()
                    };
                    rews[t].push(task.eval(&ep.observations[g], &prev_action));
                    any_labels = true;
                } else if let Some(r) = &ep.rewards {
                    rews[t].push(r[g]);
                    any_labels = true;
                }
            }
        }
        SequenceBatch {
            obs: obs
                .into_iter()
                .map(|v| Tensor::new(vec![batch, self.obs_dim], v))
                .collect(),
            prev_actions: acts
                .into_iter()
                .map(|v| Tensor::new(vec![batch, self.action_dim], v))
                .collect(),
            rewards: if any_labels {
                Some(rews.into_iter().map(|v| Tensor::new(vec![batch, 1], v)).collect())
            } else {
                None
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [
            self.obs_dim as u32,
            self.action_dim as u32,
            self.episode_len as u32,
            self.action_repeat as u32,
            self.episodes.len() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for ep in &self.episodes {
            w.write_all(&ep.seed.to_le_bytes())?;
            w.write_all(&(ep.observations.len() as u32).to_le_bytes())?;
            w.write_all(&[u8::from(ep.rewards.is_some())])?;
            for o in &ep.observations {
                for &v in o {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            for a in &ep.actions {
                for &v in a {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            if let Some(r) = &ep.rewards {
                for &v in r {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad episode-file magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported episode-file version {version}"
            )));
        }
        let obs_dim = read_u32(&mut r)? as usize;
        let action_dim = read_u32(&mut r)? as usize;
        let episode_len = read_u32(&mut r)? as usize;
        let action_repeat = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;
        let mut dataset = ReplayDataset::new(obs_dim, action_dim, episode_len, action_repeat);
        for _ in 0..count {
            let mut seed_bytes = [0u8; 8];
            r.read_exact(&mut seed_bytes)?;
            let seed = u64::from_le_bytes(seed_bytes);
            let n_obs = read_u32(&mut r)? as usize;
            let mut has_rewards = [0u8; 1];
            r.read_exact(&mut has_rewards)?;
            let observations = (0..n_obs)
                .map(|_| read_f64_vec(&mut r, obs_dim))
                .collect::<Result<Vec<_>>>()?;
            let actions = (0..n_obs - 1)
                .map(|_| read_f64_vec(&mut r, action_dim))
                .collect::<Result<Vec<_>>>()?;
            let rewards = if has_rewards[0] == 1 {
                Some(read_f64_vec(&mut r, n_obs)?)
            } else {
                None
            };
            dataset.push(Episode {
                observations,
                actions,
                rewards,
                seed,
            })?;
        }
        Ok(dataset)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64_vec(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_episode(decisions: usize, seed: u64, with_rewards: bool) -> Episode {
        let observations = (0..=decisions)
            .map(|t| vec![t as f64, -(t as f64), 0.5, 0.0])
            .collect::<Vec<_>>();
        let actions = (0..decisions).map(|t| vec![t as f64 * 0.01, 0.1]).collect();
        Episode {
            rewards: with_rewards.then(|| (0..=decisions).map(|t| t as f64 * 0.001).collect()),
            observations,
            actions,
            seed,
        }
    }

    #[test]
    fn length_invariants_enforced() {
        let mut ep = toy_episode(5, 0, false);
        ep.actions.pop();
        assert!(ep.validate().is_err());
    }

    #[test]
    fn subsequences_never_cross_episode_boundaries() {
        let mut ds = ReplayDataset::new(4, 2, 200, 2);
        for i in 0..3 {
            let mut ep = toy_episode(10, i, false);
            // Mark every observation with its episode id in dim 2.
            for o in &mut ep.observations {
                o[2] = i as f64;
            }
            ds.push(ep).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let b = ds.sample_batch(&mut rng, 6, 5, None, None);
            for t in 1..b.obs.len() {
                let prev = &b.obs[t - 1];
                let cur = &b.obs[t];
                for row in 0..6 {
                    assert_eq!(prev.data()[row * 4 + 2], cur.data()[row * 4 + 2]);
                }
            }
        }
    }

    #[test]
    fn prev_action_alignment_matches_episode() {
        let mut ds = ReplayDataset::new(4, 2, 200, 2);
        ds.push(toy_episode(10, 0, false)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = ds.sample_batch(&mut rng, 4, 6, None, None);
        // obs dim 0 stores t, action dim 0 stores 0.01 * (t - 1).
        for t in 0..6 {
            for row in 0..4 {
                let obs_t = b.obs[t].data()[row * 4];
                let act = b.prev_actions[t].data()[row * 2];
                if obs_t == 0.0 {
                    assert_eq!(act, 0.0);
                } else {
                    assert!((act - (obs_t - 1.0) * 0.01).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn stored_rewards_surface_in_batches() {
        let mut ds = ReplayDataset::new(4, 2, 200, 2);
        ds.push(toy_episode(10, 0, true)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = ds.sample_batch(&mut rng, 2, 4, None, None);
        let rewards = b.rewards.expect("labels present");
        for t in 0..4 {
            for row in 0..2 {
                let obs_t = b.obs[t].data()[row * 4];
                assert!((rewards[t].data()[row] - obs_t * 0.001).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.bin");
        let mut ds = ReplayDataset::new(4, 2, 200, 2);
        ds.push(toy_episode(10, 3, false)).unwrap();
        ds.push(toy_episode(10, 4, true)).unwrap();
        ds.save(&path).unwrap();
        let loaded = ReplayDataset::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.obs_dim, 4);
        assert_eq!(loaded.episodes[0].seed, 3);
        assert_eq!(loaded.episodes[0].observations, ds.episodes[0].observations);
        assert_eq!(loaded.episodes[1].rewards, ds.episodes[1].rewards);
    }
}
