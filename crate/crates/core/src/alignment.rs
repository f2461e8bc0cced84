//! Monotonic alignment search between text states and spectrogram frames.
//!
//! A path assigns every frame to exactly one text state; the state index
//! starts at 0, ends at `T_text − 1` and advances by at most one per frame.
//! [`mas`] finds the highest-scoring path with an `O(T_text·T_spec)` dynamic
//! program; [`mas_bruteforce`] enumerates every path and exists to check it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use voxclone_tensor::{Scalar, Tensor};

use crate::{Error, Result};

/// Largest `T_text` accepted by [`mas_bruteforce`].
pub const BRUTEFORCE_MAX_TEXT: usize = 8;
/// Largest `T_spec` accepted by [`mas_bruteforce`].
pub const BRUTEFORCE_MAX_SPEC: usize = 20;

/// A monotonic, full-coverage alignment stored as one state index per frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    t_text: usize,
    states: Vec<usize>,
}

impl AlignmentPath {
    /// Validates a per-frame state sequence.
    pub fn from_states(t_text: usize, states: Vec<usize>) -> Result<Self> {
        let bad = |m: String| Err(Error::Alignment(m));
        if t_text == 0 || states.is_empty() {
            return bad("path needs at least one state and one frame".into());
        }
        if states[0] != 0 {
            return bad("first frame must select state 0".into());
        }
        if *states.last().expect("nonempty") != t_text - 1 {
            return bad(format!("last frame must select state {}", t_text - 1));
        }
        for w in states.windows(2) {
            if w[1] < w[0] || w[1] > w[0] + 1 {
                return bad(format!("non-monotonic step {} -> {}", w[0], w[1]));
            }
        }
        Ok(Self { t_text, states })
    }

    pub fn t_text(&self) -> usize {
        self.t_text
    }

    pub fn t_spec(&self) -> usize {
        self.states.len()
    }

    /// State selected by each frame.
    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn get(&self, s: usize, t: usize) -> bool {
        self.states[t] == s
    }

    /// Dense `[T_text, T_spec]` 0/1 matrix.
    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        let mut m = vec![vec![0u8; self.t_spec()]; self.t_text];
        for (t, &s) in self.states.iter().enumerate() {
            m[s][t] = 1;
        }
        m
    }

    /// `Σ_t ll[state(t), t]`, accumulated in frame order.
    pub fn score<T: Scalar>(&self, ll: &Tensor<T>) -> T {
        self.states
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (t, &s)| acc + ll.at(s, t))
    }

    /// Frames per text state; every entry is at least 1 and they sum to `T_spec`.
    pub fn durations(&self) -> Vec<usize> {
        let mut d = vec![0; self.t_text];
        for &s in &self.states {
            d[s] += 1;
        }
        d
    }
}

/// Same as [`AlignmentPath::durations`].
pub fn path_to_durations(p: &AlignmentPath) -> Vec<usize> {
    p.durations()
}

fn check_dims<T: Scalar>(ll: &Tensor<T>) -> Result<(usize, usize)> {
    let (s, t) = ll.shape();
    if s == 0 {
        return Err(Error::Alignment("log-likelihood matrix has no text states".into()));
    }
    if t < s {
        return Err(Error::Alignment(format!(
            "{t} frames cannot cover {s} text states"
        )));
    }
    if !ll.is_finite() {
        return Err(Error::Alignment("log-likelihoods must be finite".into()));
    }
    Ok((s, t))
}

/// Maximum-score monotonic alignment of `ll: [T_text, T_spec]`.
///
/// Ties prefer staying on the current state: among equal-score paths the
/// one that advances latest is returned.
pub fn mas<T: Scalar>(ll: &Tensor<T>) -> Result<AlignmentPath> {
    let (n_text, n_spec) = check_dims(ll)?;
    let neg = T::neg_infinity();
    // value[s][t]: best score of a path prefix ending at (s, t)
    let mut value = vec![neg; n_text * n_spec];
    let at = |s: usize, t: usize| s * n_spec + t;
    value[at(0, 0)] = ll.at(0, 0);
    for t in 1..n_spec {
        // states reachable at t that can still reach the end
        let lo = (n_text + t).saturating_sub(n_spec);
        let hi = t.min(n_text - 1);
        for s in lo..=hi {
            let stay = value[at(s, t - 1)];
            let advance = if s > 0 { value[at(s - 1, t - 1)] } else { neg };
            let best = if stay >= advance { stay } else { advance };
            value[at(s, t)] = best + ll.at(s, t);
        }
    }
    let mut states = vec![0; n_spec];
    let mut s = n_text - 1;
    for t in (0..n_spec).rev() {
        states[t] = s;
        if t == 0 {
            break;
        }
        if s > 0 {
            let stay = value[at(s, t - 1)];
            let advance = value[at(s - 1, t - 1)];
            // advancing here means the path stayed on s-1 for longer
            if advance >= stay {
                s -= 1;
            }
        }
    }
    AlignmentPath::from_states(n_text, states)
}

/// Exhaustive search over all monotonic paths; for testing [`mas`].
///
/// Among equal-score paths the one that advances latest wins, matching [`mas`].
pub fn mas_bruteforce<T: Scalar>(ll: &Tensor<T>) -> Result<AlignmentPath> {
    let (n_text, n_spec) = check_dims(ll)?;
    if n_text > BRUTEFORCE_MAX_TEXT || n_spec > BRUTEFORCE_MAX_SPEC {
        return Err(Error::Alignment(format!(
            "brute force limited to {BRUTEFORCE_MAX_TEXT}x{BRUTEFORCE_MAX_SPEC}, got {n_text}x{n_spec}"
        )));
    }
    let mut best: Option<(T, Vec<usize>)> = None;
    let mut states = vec![0usize; n_spec];
    enumerate_paths(n_text, n_spec, 1, &mut states, &mut |states| {
        let score = states
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (t, &s)| acc + ll.at(s, t));
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, states.to_vec()));
        }
    });
    let (_, states) = best.expect("at least one valid path exists");
    AlignmentPath::from_states(n_text, states)
}

/// Visits every valid state sequence. Paths are generated with "stay" tried
/// before "advance" at each frame, so later-advancing paths come first.
fn enumerate_paths(n_text: usize, n_spec: usize, t: usize, states: &mut [usize], visit: &mut impl FnMut(&[usize])) {
    if t == n_spec {
        if states[n_spec - 1] == n_text - 1 {
            visit(states);
        }
        return;
    }
    let prev = states[t - 1];
    let remaining = n_spec - t;
    for s in [prev, prev + 1] {
        if s < n_text && n_text - 1 - s < remaining {
            states[t] = s;
            enumerate_paths(n_text, n_spec, t + 1, states, visit);
        }
    }
}

/// Linearly decaying noise level: `scale(step) = max(0, initial − decay·step)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub initial_scale: f64,
    pub decay_per_step: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            initial_scale: 0.01,
            decay_per_step: 2e-6,
        }
    }
}

impl NoiseSchedule {
    pub fn new(initial_scale: f64, decay_per_step: f64) -> Result<Self> {
        if !(initial_scale >= 0.0 && decay_per_step >= 0.0) {
            return Err(Error::InvalidArgument(
                "noise schedule values must be nonnegative".into(),
            ));
        }
        Ok(Self {
            initial_scale,
            decay_per_step,
        })
    }

    pub fn scale(&self, step: u64) -> f64 {
        (self.initial_scale - self.decay_per_step * step as f64).max(0.0)
    }

    /// First step at which the scale is exactly zero, if it ever is.
    pub fn exhausted_at(&self) -> Option<u64> {
        if self.initial_scale == 0.0 {
            Some(0)
        } else if self.decay_per_step > 0.0 {
            let mut s = (self.initial_scale / self.decay_per_step).floor() as u64;
            while self.scale(s) > 0.0 {
                s += 1;
            }
            Some(s)
        } else {
            None
        }
    }
}

/// [`mas`] on `ll + scale(step)·G`, `G` i.i.d. standard normal from a
/// generator seeded with `rng_seed`. Identical to `mas(ll)` once the scale is 0.
pub fn noisy_mas<T: Scalar>(
    ll: &Tensor<T>,
    schedule: &NoiseSchedule,
    step: u64,
    rng_seed: u64,
) -> Result<AlignmentPath> {
    let scale = schedule.scale(step);
    if scale == 0.0 {
        return mas(ll);
    }
    check_dims(ll)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut noisy = ll.clone();
    for v in noisy.data_mut() {
        let g: f64 = StandardNormal.sample(&mut rng);
        *v += T::lit(scale * g);
    }
    mas(&noisy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rand_ll(rng: &mut ChaCha8Rng, s: usize, t: usize) -> Tensor<f64> {
        Tensor::from_fn(s, t, |_, _| rng.gen_range(-5.0..0.0))
    }

    #[test]
    fn single_cell() {
        let p = mas(&Tensor::<f64>::zeros(1, 1)).unwrap();
        assert_eq!(p.to_matrix(), vec![vec![1]]);
        assert_eq!(mas_bruteforce(&Tensor::<f64>::zeros(1, 1)).unwrap(), p);
    }

    #[test]
    fn single_state_covers_all_frames() {
        let p = mas(&Tensor::<f64>::from_fn(1, 5, |_, t| t as f64)).unwrap();
        assert_eq!(p.to_matrix(), vec![vec![1; 5]]);
        assert_eq!(path_to_durations(&p), vec![5]);
    }

    #[test]
    fn square_matrix_forces_diagonal() {
        let ll = Tensor::from_fn(2, 2, |s, t| if s == t { -9.0 } else { 0.0 });
        let p = mas_bruteforce(&ll).unwrap();
        assert_eq!(p.to_matrix(), vec![vec![1, 0], vec![0, 1]]);
        assert_eq!(mas(&ll).unwrap(), p);
        assert_eq!(path_to_durations(&p), vec![1, 1]);
    }

    #[test]
    fn two_by_three_picks_better_of_two_paths() {
        // path A: states [0,0,1] score -1 + -1 + -1 = -3
        // path B: states [0,1,1] score -1 + -0.5 + -1 = -2.5
        let ll = Tensor::new(2, 3, vec![-1.0, -1.0, -7.0, -7.0, -0.5, -1.0]).unwrap();
        let p = mas_bruteforce(&ll).unwrap();
        assert_eq!(p.states(), &[0, 1, 1]);
        assert_eq!(p.score(&ll), -2.5);
        assert_eq!(mas(&ll).unwrap(), p);
    }

    #[test]
    fn ties_prefer_staying() {
        let ll = Tensor::<f64>::zeros(2, 4);
        assert_eq!(mas(&ll).unwrap().states(), &[0, 0, 0, 1]);
        assert_eq!(mas_bruteforce(&ll).unwrap().states(), &[0, 0, 0, 1]);
    }

    #[test]
    fn too_few_frames_is_an_error() {
        assert!(mas(&Tensor::<f64>::zeros(3, 2)).is_err());
        assert!(mas_bruteforce(&Tensor::<f64>::zeros(9, 20)).is_err());
        assert!(mas_bruteforce(&Tensor::<f64>::zeros(2, 21)).is_err());
    }

    #[test]
    fn dp_matches_enumeration_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let s = rng.gen_range(1..=8);
            let t = rng.gen_range(s..=20);
            let ll = rand_ll(&mut rng, s, t);
            let fast = mas(&ll).unwrap();
            let slow = mas_bruteforce(&ll).unwrap();
            assert_eq!(fast.score(&ll), slow.score(&ll));
        }
    }

    #[test]
    fn dp_beats_random_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let s = rng.gen_range(1..=12);
            let t = rng.gen_range(s..=60);
            let ll = rand_ll(&mut rng, s, t);
            let best = mas(&ll).unwrap().score(&ll);
            for _ in 0..1000 {
                let p = random_path(&mut rng, s, t);
                assert!(best >= p.score(&ll));
            }
        }
    }

    fn random_path(rng: &mut ChaCha8Rng, s: usize, t: usize) -> AlignmentPath {
        // choose s-1 distinct advance frames among 1..t
        let mut frames: Vec<usize> = (1..t).collect();
        for i in 0..s - 1 {
            let j = rng.gen_range(i..frames.len());
            frames.swap(i, j);
        }
        let mut adv = frames[..s - 1].to_vec();
        adv.sort_unstable();
        let mut states = Vec::with_capacity(t);
        let mut cur = 0;
        for f in 0..t {
            if adv.binary_search(&f).is_ok() {
                cur += 1;
            }
            states.push(cur);
        }
        AlignmentPath::from_states(s, states).unwrap()
    }

    #[test]
    fn noise_schedule_decays_to_zero() {
        let sched = NoiseSchedule::default();
        assert_eq!(sched.scale(0), 0.01);
        assert_eq!(sched.exhausted_at(), Some(5000));
        assert_eq!(sched.scale(5000), 0.0);
        assert!(sched.scale(4999) > 0.0);
        let mut prev = f64::INFINITY;
        for step in (0..10_000).step_by(97) {
            let s = sched.scale(step);
            assert!(s <= prev);
            prev = s;
        }
        assert_eq!(NoiseSchedule::new(0.0, 0.0).unwrap().exhausted_at(), Some(0));
        assert_eq!(NoiseSchedule::new(1.0, 0.0).unwrap().exhausted_at(), None);
        assert!(NoiseSchedule::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn noisy_mas_equals_mas_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ll = rand_ll(&mut rng, 5, 17);
        let sched = NoiseSchedule::default();
        assert_eq!(noisy_mas(&ll, &sched, 5000, 3).unwrap(), mas(&ll).unwrap());
        assert_eq!(noisy_mas(&ll, &sched, 1_000_000, 3).unwrap(), mas(&ll).unwrap());
        let off = NoiseSchedule::new(0.0, 0.0).unwrap();
        assert_eq!(noisy_mas(&ll, &off, 0, 3).unwrap(), mas(&ll).unwrap());
    }

    #[test]
    fn large_noise_perturbs_near_ties() {
        let ll = Tensor::from_fn(3, 10, |s, t| -((s as f64 * 3.3 - t as f64).abs()) * 1e-3);
        let clean = mas(&ll).unwrap();
        let sched = NoiseSchedule::new(10.0, 0.0).unwrap();
        let differs = (0..20).any(|seed| noisy_mas(&ll, &sched, 0, seed).unwrap() != clean);
        assert!(differs);
        // same seed, same path
        assert_eq!(
            noisy_mas(&ll, &sched, 0, 4).unwrap(),
            noisy_mas(&ll, &sched, 0, 4).unwrap()
        );
    }

    #[test]
    fn invalid_paths_rejected() {
        assert!(AlignmentPath::from_states(2, vec![1, 1]).is_err());
        assert!(AlignmentPath::from_states(2, vec![0, 0]).is_err());
        assert!(AlignmentPath::from_states(3, vec![0, 2, 2]).is_err());
        assert!(AlignmentPath::from_states(2, vec![0, 1, 0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn durations_sum_to_frames(s in 1usize..10, extra in 0usize..30, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = s + extra;
            let p = random_path(&mut rng, s, t);
            let d = path_to_durations(&p);
            prop_assert_eq!(d.len(), s);
            prop_assert_eq!(d.iter().sum::<usize>(), t);
            prop_assert!(d.iter().all(|&x| x >= 1));
            let m = p.to_matrix();
            for col in 0..t {
                prop_assert_eq!((0..s).map(|r| m[r][col] as usize).sum::<usize>(), 1);
            }
        }
    }
}
