//! Synthetic weakly labelled dataset.
//!
//! Normal videos are a smooth AR(1) walk around a scene center. Abnormal
//! videos follow the same walk but contain planted segments that jump to a
//! shifted center along one of a few shared anomaly directions, and jump back
//! on exit, so feature dynamics spike at segment boundaries.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{write_bag, FeatureBag, Label, Manifest, ManifestEntry, FRAMES_PER_SNIPPET};
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::metrics::{write_annotations, FrameAnnotation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    /// Training videos per class.
    pub normal_videos: usize,
    pub anomaly_videos: usize,
    /// Held-out videos per class.
    pub test_normal_videos: usize,
    pub test_anomaly_videos: usize,
    /// Inclusive snippet-count range.
    pub t_min: usize,
    pub t_max: usize,
    pub dim: usize,
    /// Inclusive range of planted segments per abnormal video.
    pub segments_min: usize,
    pub segments_max: usize,
    /// Inclusive range of segment lengths, in snippets.
    pub segment_len_min: usize,
    pub segment_len_max: usize,
    /// Norm of the feature shift applied on entering a segment.
    pub jump: f64,
    /// Per-dimension std of the walk innovations.
    pub noise: f64,
    /// AR(1) coefficient of the walk, in [0, 1).
    pub smoothness: f64,
    /// Distinct scene centers shared across videos.
    pub scenes: usize,
    /// Distinct anomaly directions shared across videos.
    pub anomaly_kinds: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            normal_videos: 40,
            anomaly_videos: 40,
            test_normal_videos: 10,
            test_anomaly_videos: 10,
            t_min: 30,
            t_max: 60,
            dim: 32,
            segments_min: 1,
            segments_max: 2,
            segment_len_min: 4,
            segment_len_max: 12,
            jump: 5.0,
            noise: 0.3,
            smoothness: 0.8,
            scenes: 4,
            anomaly_kinds: 3,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("synthetic spec: {msg}")));
        if self.t_min < 2 || self.t_min > self.t_max {
            return fail(format!(
                "snippet range [{}, {}] is empty or below 2",
                self.t_min, self.t_max
            ));
        }
        if self.dim == 0 || self.scenes == 0 || self.anomaly_kinds == 0 {
            return fail("dim, scenes and anomaly_kinds must be positive".into());
        }
        if self.segments_min == 0 || self.segments_min > self.segments_max {
            return fail(format!(
                "segment count range [{}, {}] is empty",
                self.segments_min, self.segments_max
            ));
        }
        if self.segment_len_min == 0 || self.segment_len_min > self.segment_len_max {
            return fail(format!(
                "segment length range [{}, {}] is empty",
                self.segment_len_min, self.segment_len_max
            ));
        }
        // Segments are separated by at least one normal snippet.
        let worst = self.segments_max * (self.segment_len_max + 1);
        if worst > self.t_min {
            return fail(format!(
                "{} segments of up to {} snippets do not fit in {} snippets",
                self.segments_max, self.segment_len_max, self.t_min
            ));
        }
        if !(self.noise >= 0.0) || !(self.jump > self.noise) {
            return fail(format!(
                "jump ({}) must exceed noise ({})",
                self.jump, self.noise
            ));
        }
        if !(0.0..1.0).contains(&self.smoothness) {
            return fail(format!(
                "smoothness must lie in [0, 1), got {}",
                self.smoothness
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplit {
    pub bags: Vec<FeatureBag>,
    /// Planted intervals per bag, in snippet units, inclusive.
    pub segments: Vec<Vec<[usize; 2]>>,
    pub annotations: Vec<FrameAnnotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SynthSpec,
    pub train: SyntheticSplit,
    pub test: SyntheticSplit,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

struct Shared {
    scenes: Vec<Vec<f64>>,
    kinds: Vec<Vec<f64>>,
}

fn place_segments(rng: &mut ChaCha8Rng, spec: &SynthSpec, t_len: usize) -> Result<Vec<[usize; 2]>> {
    let count = rng.random_range(spec.segments_min..=spec.segments_max);
    let lens: Vec<usize> = (0..count)
        .map(|_| rng.random_range(spec.segment_len_min..=spec.segment_len_max))
        .collect();
    // Distribute the free snippets into count + 1 gaps; inner gaps get at least one.
    let used: usize = lens.iter().sum::<usize>() + count.saturating_sub(1);
    let free = t_len.checked_sub(used).ok_or_else(|| {
        Error::Config(format!(
            "segments of total length {used} exceed {t_len} snippets"
        ))
    })?;
    let mut cuts: Vec<usize> = (0..count).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut segments = Vec::with_capacity(count);
    let mut cursor = 0;
    let mut prev_cut = 0;
    for (i, (&len, &cut)) in lens.iter().zip(&cuts).enumerate() {
        cursor += cut - prev_cut + usize::from(i > 0);
        prev_cut = cut;
        segments.push([cursor, cursor + len - 1]);
        cursor += len;
    }
    Ok(segments)
}

fn make_video(
    rng: &mut ChaCha8Rng,
    spec: &SynthSpec,
    shared: &Shared,
    label: Label,
) -> Result<(Matrix, Vec<[usize; 2]>)> {
    let t_len = rng.random_range(spec.t_min..=spec.t_max);
    let dim = spec.dim;
    let scene = &shared.scenes[rng.random_range(0..shared.scenes.len())];
    let jitter = gaussian_vec(rng, dim, 0.3);
    let center: Vec<f64> = scene.iter().zip(&jitter).map(|(a, b)| a + b).collect();

    let segments = match label {
        Label::Normal => Vec::new(),
        Label::Abnormal => place_segments(rng, spec, t_len)?,
    };
    let mut shifts = Vec::with_capacity(segments.len());
    for _ in &segments {
        let kind = &shared.kinds[rng.random_range(0..shared.kinds.len())];
        let wobble = gaussian_vec(rng, dim, 0.3 / (dim as f64).sqrt());
        let dir = unit(kind.iter().zip(&wobble).map(|(a, b)| a + b).collect());
        shifts.push(dir.into_iter().map(|v| v * spec.jump).collect::<Vec<f64>>());
    }

    let stationary = spec.noise / (1.0 - spec.smoothness * spec.smoothness).sqrt();
    let mut walk = gaussian_vec(rng, dim, stationary);
    let mut features = Matrix::zeros(t_len, dim);
    for t in 0..t_len {
        if t > 0 {
            let step = gaussian_vec(rng, dim, spec.noise);
            for (w, s) in walk.iter_mut().zip(step) {
                *w = spec.smoothness * *w + s;
            }
        }
        let shift = segments
            .iter()
            .position(|s| s[0] <= t && t <= s[1])
            .map(|i| &shifts[i]);
        for (c, slot) in features.row_mut(t).iter_mut().enumerate() {
            let v = center[c] + walk[c] + shift.map_or(0.0, |s| s[c]);
            // Stored as f32 on disk; keep the in-memory copy identical.
            *slot = v as f32 as f64;
        }
    }
    Ok((features, segments))
}

fn make_split(
    rng: &mut ChaCha8Rng,
    spec: &SynthSpec,
    shared: &Shared,
    prefix: &str,
    normal: usize,
    abnormal: usize,
) -> Result<SyntheticSplit> {
    let mut split = SyntheticSplit {
        bags: Vec::new(),
        segments: Vec::new(),
        annotations: Vec::new(),
    };
    let labels = std::iter::repeat_n(Label::Abnormal, abnormal)
        .chain(std::iter::repeat_n(Label::Normal, normal));
    for (i, label) in labels.enumerate() {
        let (features, segments) = make_video(rng, spec, shared, label)?;
        let tag = match label {
            Label::Abnormal => "abn",
            Label::Normal => "nrm",
        };
        let video_id = format!("{prefix}_{tag}_{i:04}");
        let total_frames = features.rows() * FRAMES_PER_SNIPPET;
        split.annotations.push(FrameAnnotation {
            video_id: video_id.clone(),
            total_frames,
            intervals: segments
                .iter()
                .map(|s| {
                    [
                        s[0] * FRAMES_PER_SNIPPET,
                        (s[1] + 1) * FRAMES_PER_SNIPPET - 1,
                    ]
                })
                .collect(),
        });
        split.segments.push(segments);
        split.bags.push(FeatureBag {
            video_id,
            features,
            label,
            source: None,
        });
    }
    Ok(split)
}

/// Generates train and test splits, fully determined by `spec.seed`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shared = Shared {
        scenes: (0..spec.scenes)
            .map(|_| gaussian_vec(&mut rng, spec.dim, 1.0))
            .collect(),
        kinds: (0..spec.anomaly_kinds)
            .map(|_| unit(gaussian_vec(&mut rng, spec.dim, 1.0)))
            .collect(),
    };
    let train = make_split(
        &mut rng,
        spec,
        &shared,
        "train",
        spec.normal_videos,
        spec.anomaly_videos,
    )?;
    let test = make_split(
        &mut rng,
        spec,
        &shared,
        "test",
        spec.test_normal_videos,
        spec.test_anomaly_videos,
    )?;
    Ok(SyntheticDataset {
        spec: spec.clone(),
        train,
        test,
    })
}

fn write_split(split: &SyntheticSplit, dim: usize, dir: &Path) -> Result<()> {
    let bag_dir = dir.join("bags");
    fs::create_dir_all(&bag_dir).map_err(|e| Error::io(&bag_dir, e))?;
    let mut entries = Vec::with_capacity(split.bags.len());
    for bag in &split.bags {
        let rel = format!("bags/{}.fb1", bag.video_id);
        write_bag(bag, dir.join(&rel))?;
        entries.push(ManifestEntry {
            path: rel,
            video_id: bag.video_id.clone(),
            label: bag.label,
        });
    }
    Manifest {
        dim,
        frames_per_snippet: FRAMES_PER_SNIPPET,
        entries,
    }
    .write(dir.join("manifest.json"))?;
    write_annotations(&split.annotations, dir.join("annotations.json"))
}

/// Writes `train/` and `test/` (FB1 bags, `manifest.json`, `annotations.json`)
/// plus `synth_spec.json` under `out`.
pub fn write_synthetic(ds: &SyntheticDataset, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    write_split(&ds.train, ds.spec.dim, &out.join("train"))?;
    write_split(&ds.test, ds.spec.dim, &out.join("test"))?;
    let path = out.join("synth_spec.json");
    let text = serde_json::to_string_pretty(&ds.spec).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::cosine_distance;

    fn small() -> SynthSpec {
        SynthSpec {
            normal_videos: 6,
            anomaly_videos: 6,
            test_normal_videos: 2,
            test_anomaly_videos: 2,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn labels_and_intervals() {
        let ds = generate_synthetic(&small()).unwrap();
        for split in [&ds.train, &ds.test] {
            for ((bag, segs), ann) in split
                .bags
                .iter()
                .zip(&split.segments)
                .zip(&split.annotations)
            {
                ann.validate().unwrap();
                assert_eq!(ann.total_frames, bag.len() * 16);
                match bag.label {
                    Label::Normal => assert!(segs.is_empty() && ann.intervals.is_empty()),
                    Label::Abnormal => {
                        assert!(!segs.is_empty());
                        assert!(segs.windows(2).all(|w| w[0][1] + 1 < w[1][0]));
                        assert!(segs.last().unwrap()[1] < bag.len());
                    }
                }
                assert!((30..=60).contains(&bag.len()));
            }
        }
    }

    #[test]
    fn seeded_determinism() {
        assert_eq!(
            generate_synthetic(&small()).unwrap(),
            generate_synthetic(&small()).unwrap()
        );
        let other = SynthSpec { seed: 8, ..small() };
        assert_ne!(
            generate_synthetic(&small()).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn boundaries_have_larger_feature_dynamics() {
        let ds = generate_synthetic(&SynthSpec::default()).unwrap();
        let (mut boundary, mut inside) = (Vec::new(), Vec::new());
        for (bag, segs) in ds.train.bags.iter().zip(&ds.train.segments) {
            let x = &bag.features;
            for t in 0..bag.len() - 1 {
                let d = cosine_distance(x.row(t), x.row(t + 1)).value;
                let is_boundary = segs.iter().any(|s| t + 1 == s[0] || t == s[1]);
                if is_boundary {
                    boundary.push(d);
                } else if bag.label == Label::Normal {
                    inside.push(d);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&boundary) > mean(&inside),
            "{} vs {}",
            mean(&boundary),
            mean(&inside)
        );
    }

    #[test]
    fn infeasible_specs_rejected() {
        let too_long = SynthSpec {
            segment_len_max: 40,
            ..SynthSpec::default()
        };
        assert!(matches!(
            generate_synthetic(&too_long),
            Err(Error::Config(_))
        ));
        let weak = SynthSpec {
            jump: 0.1,
            noise: 0.3,
            ..SynthSpec::default()
        };
        assert!(weak.validate().is_err());
    }

    #[test]
    fn writes_byte_identical_trees() {
        let ds = generate_synthetic(&small()).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_synthetic(&ds, a.path()).unwrap();
        write_synthetic(&ds, b.path()).unwrap();
        for rel in [
            "train/manifest.json",
            "test/annotations.json",
            "synth_spec.json",
        ] {
            assert_eq!(
                fs::read(a.path().join(rel)).unwrap(),
                fs::read(b.path().join(rel)).unwrap()
            );
        }
        let id = &ds.train.bags[0].video_id;
        let rel = format!("train/bags/{id}.fb1");
        assert_eq!(
            fs::read(a.path().join(&rel)).unwrap(),
            fs::read(b.path().join(&rel)).unwrap()
        );
    }
}
