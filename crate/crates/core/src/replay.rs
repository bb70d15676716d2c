//! Fixed-capacity FIFO store of generated trajectories.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::{Error, Result};

/// A history `h_t = (x_1, ..., x_{t-1})` of a stored trajectory, together
/// with the action `x_t` that followed it.
#[derive(Debug, Clone, Copy)]
pub struct HistorySample<'a> {
    pub trajectory: &'a Trajectory,
    /// One-based cutoff `t` in `1..=T`.
    pub cutoff: usize,
}

impl<'a> HistorySample<'a> {
    pub fn new(trajectory: &'a Trajectory, cutoff: usize) -> Self {
        debug_assert!((1..=trajectory.horizon()).contains(&cutoff));
        Self { trajectory, cutoff }
    }

    /// The `t - 1` feature vectors preceding the cutoff, row-major.
    pub fn prefix(&self) -> &'a [f64] {
        self.trajectory.prefix(self.cutoff - 1)
    }

    pub fn action(&self) -> &'a [f64] {
        self.trajectory.step(self.cutoff - 1)
    }

    /// The action is the last step, so nothing follows it.
    pub fn is_terminal(&self) -> bool {
        self.cutoff == self.trajectory.horizon()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    horizon: usize,
    dim: usize,
    storage: Vec<Trajectory>,
    /// Slot the next push overwrites once the buffer is full.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, horizon: usize, dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Invalid("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            horizon,
            dim,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        if (traj.horizon(), traj.dim()) != (self.horizon, self.dim) {
            return Err(Error::Shape(format!(
                "buffer holds {} x {} trajectories, got {} x {}",
                self.horizon,
                self.dim,
                traj.horizon(),
                traj.dim()
            )));
        }
        if self.storage.len() < self.capacity {
            self.storage.push(traj);
        } else {
            self.storage[self.cursor] = traj;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        Ok(())
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        let (newer, older) = self.storage.split_at(self.cursor);
        older.iter().chain(newer)
    }

    /// `m` distinct trajectories, uniformly without replacement.
    pub fn sample_trajectories(&self, m: usize, rng: &mut impl Rng) -> Result<Vec<&Trajectory>> {
        if m > self.len() {
            return Err(Error::Invalid(format!("cannot draw {m} from a buffer of {}", self.len())));
        }
        Ok(index::sample(rng, self.len(), m).into_iter().map(|i| &self.storage[i]).collect())
    }

    /// `m` histories: each draw picks a trajectory uniformly (with
    /// replacement across draws) and a cutoff uniformly on `1..=T`.
    pub fn sample_histories(&self, m: usize, rng: &mut impl Rng) -> Result<Vec<HistorySample<'_>>> {
        if self.is_empty() {
            return Err(Error::Invalid("cannot sample histories from an empty buffer".into()));
        }
        Ok((0..m)
            .map(|_| {
                let traj = &self.storage[rng.gen_range(0..self.len())];
                HistorySample::new(traj, rng.gen_range(1..=self.horizon))
            })
            .collect())
    }

    /// Same draw as [`ReplayBuffer::sample_histories`]; each sample also
    /// carries its action and whether it is the terminal step.
    pub fn sample_transitions(&self, m: usize, rng: &mut impl Rng) -> Result<Vec<HistorySample<'_>>> {
        self.sample_histories(m, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn traj(v: f64) -> Trajectory {
        Trajectory::new(2, 1, vec![v, v]).unwrap()
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(2, 2, 1).unwrap();
        for v in [1.0, 2.0, 3.0] {
            buf.push(traj(v)).unwrap();
        }
        let got: Vec<f64> = buf.iter().map(|t| t.get(0, 0)).collect();
        assert_eq!(got, vec![2.0, 3.0]);
    }

    #[test]
    fn rejects_wrong_shape_and_oversampling() {
        let mut buf = ReplayBuffer::new(4, 2, 1).unwrap();
        assert!(buf.push(Trajectory::new(3, 1, vec![0.0; 3]).unwrap()).is_err());
        buf.push(traj(0.5)).unwrap();
        let mut rng = seeded_rng(0);
        assert!(buf.sample_trajectories(2, &mut rng).is_err());
        let empty = ReplayBuffer::new(4, 2, 1).unwrap();
        assert!(empty.sample_histories(1, &mut rng).is_err());
    }

    #[test]
    fn first_cutoff_is_empty_prefix() {
        let t = traj(0.4);
        let s = HistorySample::new(&t, 1);
        assert!(s.prefix().is_empty());
        assert_eq!(s.action(), &[0.4]);
        assert!(!s.is_terminal());
        assert!(HistorySample::new(&t, 2).is_terminal());
    }
}
