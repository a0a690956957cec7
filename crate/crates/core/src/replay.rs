//! Shared store of whole trajectories, sampled as fixed-length context slices.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::rollout::{read_trajectory, read_u32, read_u64, write_trajectory, StepView, Trajectory};

const STORE_MAGIC: &[u8; 4] = b"LFRP";
const STORE_VERSION: u32 = 1;

/// A window of one trajectory, front-padded to the batch length.
///
/// Row `i` of the padded slice is `steps[i - pad]` for `i >= pad` and
/// padding otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub pad: usize,
    pub steps: Vec<StepView>,
}

impl Slice {
    pub fn len(&self) -> usize {
        self.pad + self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self, row: usize) -> Option<&StepView> {
        row.checked_sub(self.pad).and_then(|i| self.steps.get(i))
    }
}

/// Learner-facing batch. Carries no environment labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceBatch {
    pub seq_len: usize,
    pub slices: Vec<Slice>,
}

impl SliceBatch {
    /// Single slice holding the whole context, unpadded.
    pub fn single(steps: Vec<StepView>) -> Self {
        Self { seq_len: steps.len(), slices: vec![Slice { pad: 0, steps }] }
    }

    pub fn rows(&self) -> usize {
        self.seq_len * self.slices.len()
    }

    /// Row-major validity mask, `false` on padding.
    pub fn valid_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.rows());
        for s in &self.slices {
            out.extend((0..self.seq_len).map(|i| i >= s.pad));
        }
        out
    }
}

/// Ring of complete trajectories with a capacity measured in env steps.
#[derive(Debug, Clone)]
pub struct TrajectoryStore {
    capacity: usize,
    trajectories: VecDeque<Arc<Trajectory>>,
    stored_steps: usize,
    inflow: BTreeMap<String, u64>,
}

pub type SharedStore = Arc<RwLock<TrajectoryStore>>;

impl TrajectoryStore {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self { capacity, trajectories: VecDeque::new(), stored_steps: 0, inflow: BTreeMap::new() })
    }

    pub fn shared(capacity: usize) -> Result<SharedStore> {
        Ok(Arc::new(RwLock::new(Self::new(capacity)?)))
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Env steps currently held.
    pub fn stored_steps(&self) -> usize {
        self.stored_steps
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().map(|t| &**t)
    }

    /// Env steps ever appended, per environment label.
    pub fn inflow_counts(&self) -> &BTreeMap<String, u64> {
        &self.inflow
    }

    pub fn append(&mut self, traj: Trajectory) -> Result<()> {
        let steps = traj.steps();
        if traj.is_empty() || steps == 0 {
            return Err(Error::Domain("cannot store an empty trajectory".into()));
        }
        if steps > self.capacity {
            return Err(Error::Domain(format!(
                "trajectory of {steps} steps exceeds replay capacity {}",
                self.capacity
            )));
        }
        *self.inflow.entry(traj.env_tag().to_string()).or_insert(0) += steps as u64;
        self.stored_steps += steps;
        self.trajectories.push_back(Arc::new(traj));
        while self.stored_steps > self.capacity {
            let old = self.trajectories.pop_front().expect("capacity exceeded with no trajectories");
            self.stored_steps -= old.steps();
        }
        Ok(())
    }

    /// `batch_size` windows of `seq_len` records: a uniformly chosen
    /// trajectory, then a uniformly chosen start among its full windows.
    pub fn sample_slices(&self, batch_size: usize, seq_len: usize, rng: &mut dyn RngCore) -> Result<SliceBatch> {
        if self.trajectories.is_empty() {
            return Err(Error::NotReady("replay store is empty".into()));
        }
        if seq_len == 0 || batch_size == 0 {
            return Err(Error::Domain("slice length and batch size must be positive".into()));
        }
        let mut slices = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let traj = &self.trajectories[rng.random_range(0..self.trajectories.len())];
            let n = traj.records.len();
            let (start, pad) = if n >= seq_len { (rng.random_range(0..=n - seq_len), 0) } else { (0, seq_len - n) };
            let take = seq_len - pad;
            let steps = traj.records[start..start + take].iter().map(|r| r.view()).collect();
            slices.push(Slice { pad, steps });
        }
        Ok(SliceBatch { seq_len, slices })
    }

    /// Share of appended env steps per environment label.
    pub fn inflow_report(&self) -> BTreeMap<String, f64> {
        let total: u64 = self.inflow.values().sum();
        if total == 0 {
            return BTreeMap::new();
        }
        self.inflow.iter().map(|(k, &v)| (k.clone(), v as f64 / total as f64)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_le_bytes())?;
        w.write_all(&(self.capacity as u64).to_le_bytes())?;
        w.write_all(&(self.inflow.len() as u32).to_le_bytes())?;
        for (tag, count) in &self.inflow {
            w.write_all(&(tag.len() as u32).to_le_bytes())?;
            w.write_all(tag.as_bytes())?;
            w.write_all(&count.to_le_bytes())?;
        }
        w.write_all(&(self.trajectories.len() as u32).to_le_bytes())?;
        for t in &self.trajectories {
            write_trajectory(&mut w, t)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(Error::Format("not a replay store file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != STORE_VERSION {
            return Err(Error::Format(format!("unsupported replay store version {version}")));
        }
        let mut store = Self::new(read_u64(&mut r)? as usize)?;
        for _ in 0..read_u32(&mut r)? {
            let len = read_u32(&mut r)? as usize;
            let mut tag = vec![0u8; len];
            r.read_exact(&mut tag)?;
            let tag = String::from_utf8(tag).map_err(|_| Error::Format("inflow label is not UTF-8".into()))?;
            store.inflow.insert(tag, read_u64(&mut r)?);
        }
        for _ in 0..read_u32(&mut r)? {
            let t = read_trajectory(&mut r)?;
            store.stored_steps += t.steps();
            store.trajectories.push_back(Arc::new(t));
        }
        if store.stored_steps > store.capacity {
            return Err(Error::Format("stored trajectories exceed the recorded capacity".into()));
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::TimestepRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::thread;

    fn traj(tag: &str, steps: usize, marker: f32) -> Trajectory {
        let tag: Arc<str> = Arc::from(tag);
        Trajectory::new(
            (0..=steps)
                .map(|i| TimestepRecord {
                    obs: vec![marker, i as f32],
                    prev_action: (i > 0).then_some(0),
                    prev_reward: 0.0,
                    prev_done: false,
                    terminal: i == steps,
                    episode_index: 0,
                    objective_mask: true,
                    env_tag: Arc::clone(&tag),
                })
                .collect(),
        )
    }

    #[test]
    fn eviction_keeps_capacity() {
        let mut s = TrajectoryStore::new(10).unwrap();
        for i in 0..5 {
            s.append(traj("a", 4, i as f32)).unwrap();
            assert!(s.stored_steps() <= 10);
        }
        assert_eq!(s.num_trajectories(), 2);
        // Oldest first: the survivors are the last two appended.
        let markers: Vec<f32> = s.trajectories().map(|t| t.records[0].obs[0]).collect();
        assert_eq!(markers, vec![3.0, 4.0]);
        assert_eq!(s.inflow_counts()["a"], 20);
        assert!(s.append(traj("a", 0, 0.0)).is_err());
        assert!(s.append(traj("a", 11, 0.0)).is_err());
    }

    #[test]
    fn inflow_accounting() {
        let mut s = TrajectoryStore::new(1000).unwrap();
        assert!(s.inflow_report().is_empty());
        s.append(traj("x", 5, 0.0)).unwrap();
        assert_eq!(s.inflow_report()["x"], 1.0);
        s.append(traj("y", 5, 0.0)).unwrap();
        let r = s.inflow_report();
        assert_eq!((r["x"], r["y"]), (0.5, 0.5));
        s.append(traj("z", 7, 0.0)).unwrap();
        assert!((s.inflow_report().values().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(s.inflow_counts().values().sum::<u64>(), 17);
    }

    #[test]
    fn slices_and_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = TrajectoryStore::new(10).unwrap();
        assert!(matches!(empty.sample_slices(1, 3, &mut rng), Err(Error::NotReady(_))));

        // A trajectory with exactly `l` records is always returned whole.
        let mut s = TrajectoryStore::new(100).unwrap();
        s.append(traj("a", 4, 0.0)).unwrap();
        let b = s.sample_slices(8, 5, &mut rng).unwrap();
        for sl in &b.slices {
            assert_eq!(sl.pad, 0);
            assert_eq!(sl.steps, s.trajectories().next().unwrap().records.iter().map(|r| r.view()).collect::<Vec<_>>());
        }

        let mut s = TrajectoryStore::new(100).unwrap();
        s.append(traj("a", 2, 0.0)).unwrap();
        let b = s.sample_slices(1, 5, &mut rng).unwrap();
        assert_eq!(b.slices[0].pad, 2);
        assert_eq!(b.valid_mask(), vec![false, false, true, true, true]);
        assert!(b.slices[0].step(1).is_none());
        assert_eq!(b.slices[0].step(2).unwrap().obs, vec![0.0, 0.0]);
    }

    #[test]
    fn slices_never_cross_trajectories() {
        let mut s = TrajectoryStore::new(1000).unwrap();
        for i in 0..6 {
            s.append(traj("a", 3 + i * 2, i as f32)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = s.sample_slices(500, 6, &mut rng).unwrap();
        for sl in &b.slices {
            let marker = sl.steps[0].obs[0];
            for (j, st) in sl.steps.iter().enumerate() {
                assert_eq!(st.obs[0], marker);
                assert_eq!(st.obs[1], sl.steps[0].obs[1] + j as f32);
            }
        }
        // No env label can leak: the batch type only holds StepViews.
        fn labels_absent(_: &SliceBatch) {}
        labels_absent(&b);
    }

    #[test]
    fn start_positions_are_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut s = TrajectoryStore::new(1000).unwrap();
        s.append(traj("a", 19, 0.0)).unwrap();
        let l = 8;
        let windows = 20 - l + 1;
        let mut counts = vec![0f64; windows];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let b = s.sample_slices(n, l, &mut rng).unwrap();
        for sl in &b.slices {
            counts[sl.steps[0].obs[1] as usize] += 1.0;
        }
        let e = n as f64 / windows as f64;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new((windows - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2} p {p}");
    }

    #[test]
    fn concurrent_appenders_lose_nothing() {
        let store = TrajectoryStore::shared(1_000_000).unwrap();
        let per_thread = 300;
        let handles: Vec<_> = ["left", "right"]
            .into_iter()
            .enumerate()
            .map(|(w, tag)| {
                let store = Arc::clone(&store);
                thread::spawn(move || {
                    for i in 0..per_thread {
                        let t = traj(tag, 1 + (i % 7), (w * 10_000 + i) as f32);
                        store.write().unwrap().append(t).unwrap();
                    }
                })
            })
            .collect();
        let sampler = {
            let store = Arc::clone(&store);
            thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                for _ in 0..200 {
                    let guard = store.read().unwrap();
                    if let Ok(b) = guard.sample_slices(4, 3, &mut rng) {
                        for sl in &b.slices {
                            let m = sl.steps[0].obs[0];
                            assert!(sl.steps.iter().all(|st| st.obs[0] == m));
                        }
                    }
                }
            })
        };
        for h in handles {
            h.join().unwrap();
        }
        sampler.join().unwrap();
        let s = store.read().unwrap();
        assert_eq!(s.num_trajectories(), 2 * per_thread);
        let expected_steps: usize = 2 * (0..per_thread).map(|i| 1 + (i % 7)).sum::<usize>();
        assert_eq!(s.stored_steps(), expected_steps);
        let records: usize = s.trajectories().map(|t| t.records.len()).sum();
        assert_eq!(records, expected_steps + 2 * per_thread);
        for t in s.trajectories() {
            let m = t.records[0].obs[0];
            assert!(t.records.iter().enumerate().all(|(i, r)| r.obs[0] == m && r.obs[1] == i as f32));
        }
    }

    #[test]
    fn persistence_round_trip() {
        let mut s = TrajectoryStore::new(30).unwrap();
        for i in 0..5 {
            s.append(traj(if i % 2 == 0 { "a" } else { "b" }, 5 + i, i as f32)).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.bin");
        s.save(&path).unwrap();
        let back = TrajectoryStore::load(&path).unwrap();
        assert_eq!(back.capacity(), s.capacity());
        assert_eq!(back.stored_steps(), s.stored_steps());
        assert_eq!(back.inflow_counts(), s.inflow_counts());
        assert!(back.trajectories().eq(s.trajectories()));
    }
}
