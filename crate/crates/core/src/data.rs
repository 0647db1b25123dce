//! Scenes, ETH/UCY-style text ingestion, normalization and synthetic scenes.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ArtError, Result};
use crate::tensor::Tensor;

/// Seconds per frame of the ETH/UCY annotations (2.5 fps).
pub const DEFAULT_FRAME_INTERVAL: f64 = 0.4;

/// One observation window: `M` agents with `T_h` observed and optionally
/// `T_f` future positions, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    agent_ids: Vec<i64>,
    observed: Tensor,
    future: Option<Tensor>,
    frame_interval: f64,
}

impl Scene {
    /// `observed` is `[M, T_h, 2]`; `future`, when given, is `[M, T_f, 2]`.
    pub fn new(agent_ids: Vec<i64>, observed: Tensor, future: Option<Tensor>, frame_interval: f64) -> Result<Self> {
        let s = observed.shape();
        if s.len() != 3 || s[2] != 2 || s[0] == 0 || s[1] == 0 {
            return Err(ArtError::shape("Scene::new observed", s, &[agent_ids.len(), 0, 2]));
        }
        if s[0] != agent_ids.len() {
            return Err(ArtError::shape("Scene::new agent_ids", s, &[agent_ids.len()]));
        }
        if let Some(f) = &future {
            let fs = f.shape();
            if fs.len() != 3 || fs[0] != s[0] || fs[2] != 2 || fs[1] == 0 {
                return Err(ArtError::shape("Scene::new future", s, fs));
            }
            if !f.all_finite() {
                return Err(ArtError::Numeric("scene future has non-finite positions".into()));
            }
        }
        if !observed.all_finite() {
            return Err(ArtError::Numeric("scene has non-finite positions".into()));
        }
        Ok(Self {
            agent_ids,
            observed,
            future,
            frame_interval,
        })
    }

    /// Builds a scene from full tracks of `t_h + t_f` points per agent.
    pub fn from_tracks(tracks: &[Vec<[f64; 2]>], t_h: usize, frame_interval: f64) -> Result<Self> {
        let m = tracks.len();
        let len = tracks.first().map_or(0, Vec::len);
        if m == 0 || t_h == 0 || t_h > len || tracks.iter().any(|t| t.len() != len) {
            return Err(ArtError::Contract(format!(
                "from_tracks needs {m} equal-length tracks of at least {t_h} points"
            )));
        }
        let t_f = len - t_h;
        let mut obs = Vec::with_capacity(m * t_h * 2);
        let mut fut = Vec::with_capacity(m * t_f * 2);
        for track in tracks {
            obs.extend(track[..t_h].iter().flatten());
            fut.extend(track[t_h..].iter().flatten());
        }
        let future = (t_f > 0).then(|| Tensor::new(&[m, t_f, 2], fut)).transpose()?;
        Self::new(
            (0..m as i64).collect(),
            Tensor::new(&[m, t_h, 2], obs)?,
            future,
            frame_interval,
        )
    }

    pub fn agent_ids(&self) -> &[i64] {
        &self.agent_ids
    }

    pub fn observed(&self) -> &Tensor {
        &self.observed
    }

    pub fn future(&self) -> Option<&Tensor> {
        self.future.as_ref()
    }

    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }

    pub fn num_agents(&self) -> usize {
        self.observed.shape()[0]
    }

    pub fn t_h(&self) -> usize {
        self.observed.shape()[1]
    }

    pub fn t_f(&self) -> Option<usize> {
        self.future.as_ref().map(|f| f.shape()[1])
    }

    pub fn observed_at(&self, agent: usize, t: usize) -> [f64; 2] {
        let d = self.observed.data();
        let o = (agent * self.t_h() + t) * 2;
        [d[o], d[o + 1]]
    }

    pub fn future_at(&self, agent: usize, t: usize) -> Option<[f64; 2]> {
        let f = self.future.as_ref()?;
        let o = (agent * f.shape()[1] + t) * 2;
        Some([f.data()[o], f.data()[o + 1]])
    }

    pub fn last_observed(&self) -> Vec<[f64; 2]> {
        (0..self.num_agents())
            .map(|i| self.observed_at(i, self.t_h() - 1))
            .collect()
    }

    /// Shifts every position by `offset`.
    pub fn translated(&self, offset: [f64; 2]) -> Scene {
        let shift = |t: &Tensor| {
            let data = t
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + offset[i % 2])
                .collect();
            Tensor::new(t.shape(), data).expect("same shape")
        };
        Scene {
            agent_ids: self.agent_ids.clone(),
            observed: shift(&self.observed),
            future: self.future.as_ref().map(shift),
            frame_interval: self.frame_interval,
        }
    }

    /// Reorders agents so that new agent `k` is old agent `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Scene {
        assert_eq!(perm.len(), self.num_agents());
        let take = |t: &Tensor| {
            let row = t.shape()[1] * 2;
            let data = perm
                .iter()
                .flat_map(|&p| t.data()[p * row..(p + 1) * row].iter().copied())
                .collect();
            Tensor::new(t.shape(), data).expect("same shape")
        };
        Scene {
            agent_ids: perm.iter().map(|&p| self.agent_ids[p]).collect(),
            observed: take(&self.observed),
            future: self.future.as_ref().map(take),
            frame_interval: self.frame_interval,
        }
    }
}

/// Translation removed by [`normalize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationState {
    pub centroid: [f64; 2],
}

impl NormalizationState {
    pub fn denormalize(&self, scene: &Scene) -> Scene {
        scene.translated(self.centroid)
    }

    pub fn denormalize_point(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0] + self.centroid[0], p[1] + self.centroid[1]]
    }
}

/// Translates the scene so the agents' mean position at the last observed
/// frame sits at the origin.
pub fn normalize(scene: &Scene) -> (Scene, NormalizationState) {
    let last = scene.last_observed();
    let m = last.len() as f64;
    let mut c = [0.0, 0.0];
    for p in &last {
        c[0] += p[0];
        c[1] += p[1];
    }
    c = [c[0] / m, c[1] / m];
    (scene.translated([-c[0], -c[1]]), NormalizationState { centroid: c })
}

/// Reads whitespace-separated `frame_id agent_id x y` records and cuts
/// sliding windows of `observed_len + future_len` consecutive frames.
///
/// Only agents present in every frame of a window are kept; windows with no
/// such agent are dropped. Lines starting with `#` and blank lines are
/// skipped.
pub fn load_ethucy_text(path: &Path, observed_len: usize, future_len: usize, stride: usize) -> Result<Vec<Scene>> {
    let text = std::fs::read_to_string(path).map_err(|e| ArtError::io(format!("reading {}", path.display()), e))?;
    parse_ethucy_text(&text, path, observed_len, future_len, stride)
}

pub fn parse_ethucy_text(
    text: &str,
    path: &Path,
    observed_len: usize,
    future_len: usize,
    stride: usize,
) -> Result<Vec<Scene>> {
    if observed_len == 0 || stride == 0 {
        return Err(ArtError::Config("observed_len and stride must be at least 1".into()));
    }
    // frame -> agent -> position; BTreeMaps keep both orders deterministic
    let mut frames: BTreeMap<i64, BTreeMap<i64, [f64; 2]>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| ArtError::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", fields.len())));
        }
        let mut vals = [0.0; 4];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.parse::<f64>().map_err(|e| parse_err(format!("`{f}`: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("`{f}` is not finite")));
            }
        }
        let frame = vals[0].round() as i64;
        let agent = vals[1].round() as i64;
        frames
            .entry(frame)
            .or_default()
            .entry(agent)
            .or_insert([vals[2], vals[3]]);
    }

    let frame_list: Vec<&BTreeMap<i64, [f64; 2]>> = frames.values().collect();
    let window = observed_len + future_len;
    let mut scenes = Vec::new();
    let mut start = 0;
    while start + window <= frame_list.len() {
        let span = &frame_list[start..start + window];
        let agents: Vec<i64> = span[0]
            .keys()
            .copied()
            .filter(|a| span.iter().all(|f| f.contains_key(a)))
            .collect();
        if !agents.is_empty() {
            let tracks: Vec<Vec<[f64; 2]>> = agents
                .iter()
                .map(|a| span.iter().map(|f| f[a]).collect())
                .collect();
            let mut scene = Scene::from_tracks(&tracks, observed_len, DEFAULT_FRAME_INTERVAL)?;
            scene.agent_ids = agents;
            scenes.push(scene);
        }
        start += stride;
    }
    Ok(scenes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    ConstantVelocity,
    Crossing,
    Group,
}

impl FromStr for SyntheticKind {
    type Err = ArtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant_velocity" => Ok(Self::ConstantVelocity),
            "crossing" => Ok(Self::Crossing),
            "group" => Ok(Self::Group),
            other => Err(ArtError::Config(format!(
                "unknown synthetic kind `{other}` (constant_velocity | crossing | group)"
            ))),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ConstantVelocity => "constant_velocity",
            Self::Crossing => "crossing",
            Self::Group => "group",
        })
    }
}

/// `p(t) = p0 + v·t` for `t = 0..len`.
pub fn constant_velocity_track(p0: [f64; 2], v: [f64; 2], len: usize) -> Vec<[f64; 2]> {
    (0..len)
        .map(|t| [p0[0] + v[0] * t as f64, p0[1] + v[1] * t as f64])
        .collect()
}

/// Per-step heading change of crossing agents after the observed window.
pub const CROSSING_TURN_RATE: f64 = 0.12;
/// Lateral gap of a crossing pair at its closest observed approach, meters.
pub const CROSSING_GAP: (f64, f64) = (0.05, 0.35);
/// Jitter of group members around the shared motion, meters.
pub const GROUP_JITTER: f64 = 0.05;

fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn random_velocity(rng: &mut ChaCha8Rng, speed: (f64, f64)) -> [f64; 2] {
    let heading = rng.gen_range(-PI..PI);
    let s = rng.gen_range(speed.0..speed.1);
    [s * heading.cos(), s * heading.sin()]
}

/// Generates one synthetic scene with `m` agents.
///
/// * `ConstantVelocity`: straight tracks with random start and velocity.
/// * `Crossing`: agents in pairs on intersecting straight paths that pass
///   within [`CROSSING_GAP`] of each other at a random observed step. After
///   the observed window each agent veers away from its partner at
///   [`CROSSING_TURN_RATE`] rad/step, so the future depends on the
///   encounter. An odd agent out walks at constant velocity.
/// * `Group`: shared velocity plus independent Gaussian jitter.
pub fn generate_synthetic(kind: SyntheticKind, m: usize, t_h: usize, t_f: usize, seed: u64) -> Result<Scene> {
    if m == 0 || t_h == 0 {
        return Err(ArtError::Config("synthetic scenes need m >= 1 and t_h >= 1".into()));
    }
    if kind == SyntheticKind::Crossing && m < 2 {
        return Err(ArtError::Config("crossing scenes need m >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = t_h + t_f;
    let tracks: Vec<Vec<[f64; 2]>> = match kind {
        SyntheticKind::ConstantVelocity => (0..m)
            .map(|_| {
                let p0 = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
                let v = random_velocity(&mut rng, (0.1, 0.6));
                constant_velocity_track(p0, v, len)
            })
            .collect(),
        SyntheticKind::Crossing => {
            let mut tracks = Vec::with_capacity(m);
            for _ in 0..m / 2 {
                let (a, b) = crossing_pair(&mut rng, t_h, t_f);
                tracks.push(a);
                tracks.push(b);
            }
            if m % 2 == 1 {
                let p0 = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
                let v = random_velocity(&mut rng, (0.2, 0.5));
                tracks.push(constant_velocity_track(p0, v, len));
            }
            tracks
        }
        SyntheticKind::Group => {
            let v = random_velocity(&mut rng, (0.2, 0.5));
            let center = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let jitter = Normal::new(0.0, GROUP_JITTER).expect("valid sigma");
            (0..m)
                .map(|_| {
                    let p0 = [
                        center[0] + rng.gen_range(-1.0..1.0),
                        center[1] + rng.gen_range(-1.0..1.0),
                    ];
                    constant_velocity_track(p0, v, len)
                        .into_iter()
                        .map(|p| [p[0] + jitter.sample(&mut rng), p[1] + jitter.sample(&mut rng)])
                        .collect()
                })
                .collect()
        }
    };
    Scene::from_tracks(&tracks, t_h, DEFAULT_FRAME_INTERVAL)
}

fn crossing_pair(rng: &mut ChaCha8Rng, t_h: usize, t_f: usize) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let encounter = if t_h >= 3 { rng.gen_range(1..t_h - 1) } else { t_h - 1 } as f64;
    let cross = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
    let v1 = random_velocity(rng, (0.3, 0.5));
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let angle = side * rng.gen_range(PI / 3.0..2.0 * PI / 3.0);
    let s2 = rng.gen_range(0.3..0.5) / v1[0].hypot(v1[1]);
    let v2 = rotate([v1[0] * s2, v1[1] * s2], angle);
    let gap = rng.gen_range(CROSSING_GAP.0..CROSSING_GAP.1);
    let dir = [v1[0] / v1[0].hypot(v1[1]), v1[1] / v1[0].hypot(v1[1])];
    let gap_sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    // agent 2 reaches the crossing displaced along agent 1's heading
    let p2_at = [cross[0] + gap_sign * gap * dir[0], cross[1] + gap_sign * gap * dir[1]];

    let straight = |at: [f64; 2], v: [f64; 2]| -> Vec<[f64; 2]> {
        (0..t_h)
            .map(|t| {
                let dt = t as f64 - encounter;
                [at[0] + v[0] * dt, at[1] + v[1] * dt]
            })
            .collect()
    };
    let mut a = straight(cross, v1);
    let mut b = straight(p2_at, v2);

    let turn_sign = |v: [f64; 2], me: [f64; 2], other: [f64; 2]| {
        let rel = [other[0] - me[0], other[1] - me[1]];
        // partner on the left -> turn right
        if v[0] * rel[1] - v[1] * rel[0] >= 0.0 {
            -1.0
        } else {
            1.0
        }
    };
    let sa = turn_sign(v1, cross, p2_at);
    let sb = turn_sign(v2, p2_at, cross);
    for (track, v, sign) in [(&mut a, v1, sa), (&mut b, v2, sb)] {
        let mut p = *track.last().expect("t_h >= 1");
        for s in 0..t_f {
            let step = rotate(v, sign * CROSSING_TURN_RATE * (s + 1) as f64);
            p = [p[0] + step[0], p[1] + step[1]];
            track.push(p);
        }
    }
    (a, b)
}

/// Minimum pairwise distance between two agents over the observed window,
/// with the step where it occurs.
pub fn min_observed_distance(scene: &Scene, i: usize, j: usize) -> (f64, usize) {
    (0..scene.t_h())
        .map(|t| {
            let a = scene.observed_at(i, t);
            let b = scene.observed_at(j, t);
            ((a[0] - b[0]).hypot(a[1] - b[1]), t)
        })
        .fold((f64::INFINITY, 0), |best, cur| if cur.0 < best.0 { cur } else { best })
}
