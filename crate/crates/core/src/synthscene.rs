//! Synthetic object pairs with exactly known property differences.
//!
//! Each object is a closed radial blob `r(φ) = R₀ (1 + A d cos kφ)` with a
//! single shape coefficient `d`, placed by `Translate · Rot(θ) · Scale(sx, sy)`,
//! filled with the solid colour `a·A₁ + (1 − a)·A₀` over a solid grey
//! background. Oracle keypoints are boundary points at evenly spaced `φ`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::Correspondences;
use crate::geometry::AffineTransform;
use crate::imaging::{pixel_to_norm, write_image, write_mask, Image, Mask, Rgb};
use crate::{Error, Point, Result};

/// Generator settings. Serialized as a flat TOML key/value file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub shape_range: [f64; 2],
    pub rotation_range_deg: [f64; 2],
    pub translation_range: [f64; 2],
    pub scale_range: [f64; 2],
    pub appearance_range: [f64; 2],
    pub background_range: [f64; 2],
    pub color_a0: Rgb,
    pub color_a1: Rgb,
    pub keypoint_count: usize,
    pub base_radius: f64,
    pub harmonic: u32,
    pub shape_amplitude: f64,
    /// Sub-samples per pixel axis for edge coverage outside the mask; 1
    /// renders hard edges.
    pub supersampling: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            shape_range: [-4.0, 4.0],
            rotation_range_deg: [-18.0, 18.0],
            translation_range: [-0.4, 0.4],
            scale_range: [0.7, 1.3],
            appearance_range: [0.0, 1.0],
            background_range: [0.2, 0.8],
            color_a0: [0.9, 0.25, 0.1],
            color_a1: [0.1, 0.35, 0.95],
            keypoint_count: 12,
            base_radius: 0.5,
            harmonic: 3,
            shape_amplitude: 0.05,
            supersampling: 4,
        }
    }
}

impl SceneConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SceneConfig =
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("shape_range", self.shape_range),
            ("rotation_range_deg", self.rotation_range_deg),
            ("translation_range", self.translation_range),
            ("scale_range", self.scale_range),
            ("appearance_range", self.appearance_range),
            ("background_range", self.background_range),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "{name}: lower bound exceeds upper"
                )));
            }
        }
        if self.scale_range[0] <= 0.0 {
            return Err(Error::InvalidArgument(
                "scale_range must be positive".into(),
            ));
        }
        let unit = |r: [f64; 2]| r[0] >= 0.0 && r[1] <= 1.0;
        if !unit(self.appearance_range) || !unit(self.background_range) {
            return Err(Error::InvalidArgument(
                "appearance and background ranges must lie in [0, 1]".into(),
            ));
        }
        if self
            .color_a0
            .iter()
            .chain(&self.color_a1)
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidArgument("colours must lie in [0, 1]".into()));
        }
        if self.keypoint_count < 3 || self.base_radius <= 0.0 || self.harmonic == 0 {
            return Err(Error::InvalidArgument(
                "need keypoint_count >= 3, base_radius > 0, harmonic >= 1".into(),
            ));
        }
        if !(1..=16).contains(&self.supersampling) {
            return Err(Error::InvalidArgument(
                "supersampling must be in 1..=16".into(),
            ));
        }
        let worst = self.shape_amplitude * self.shape_range[0].abs().max(self.shape_range[1].abs());
        if worst >= 1.0 {
            return Err(Error::InvalidArgument(
                "shape range allows a non-positive boundary radius".into(),
            ));
        }
        Ok(())
    }
}

/// The generative parameters of one object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub d: f64,
    pub sx: f64,
    pub sy: f64,
    /// Degrees.
    pub theta: f64,
    pub tx: f64,
    pub ty: f64,
    pub a: f64,
    pub background_seed: u64,
}

impl SceneDescriptor {
    /// The undeformed unit object at the origin, colour `A₀`.
    pub fn canonical() -> Self {
        SceneDescriptor {
            d: 0.0,
            sx: 1.0,
            sy: 1.0,
            theta: 0.0,
            tx: 0.0,
            ty: 0.0,
            a: 0.0,
            background_seed: 0,
        }
    }

    /// Object-to-image transform `Translate · Rot(θ) · Scale(sx, sy)`.
    pub fn placement(&self) -> AffineTransform {
        AffineTransform::translation(self.tx, self.ty)
            .compose(&AffineTransform::rotation_deg(self.theta))
            .compose(&AffineTransform::scale(self.sx, self.sy))
    }

    fn validate(&self, cfg: &SceneConfig) -> Result<()> {
        let fields = [
            self.d, self.sx, self.sy, self.theta, self.tx, self.ty, self.a,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDescriptor("non-finite field".into()));
        }
        if self.sx <= 0.0 || self.sy <= 0.0 {
            return Err(Error::InvalidDescriptor("scales must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.a) {
            return Err(Error::InvalidDescriptor(format!(
                "a = {} outside [0, 1]",
                self.a
            )));
        }
        if 1.0 - cfg.shape_amplitude * self.d.abs() <= 0.0 {
            return Err(Error::InvalidDescriptor(format!(
                "shape coefficient {} gives a non-positive boundary radius",
                self.d
            )));
        }
        Ok(())
    }
}

/// Property differences between a source and a target object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDifference {
    pub d: f64,
    pub sx: f64,
    pub sy: f64,
    pub theta: f64,
    pub tx: f64,
    pub ty: f64,
    pub a: f64,
}

/// Shape and appearance as absolute differences, scale as target/source
/// ratios, rotation and translation as signed target − source differences.
pub fn gt_difference(src: &SceneDescriptor, tar: &SceneDescriptor) -> GroundTruthDifference {
    GroundTruthDifference {
        d: (tar.d - src.d).abs(),
        sx: tar.sx / src.sx,
        sy: tar.sy / src.sy,
        theta: tar.theta - src.theta,
        tx: tar.tx - src.tx,
        ty: tar.ty - src.ty,
        a: (tar.a - src.a).abs(),
    }
}

fn boundary_radius(cfg: &SceneConfig, d: f64, phi: f64) -> f64 {
    cfg.base_radius * (1.0 + cfg.shape_amplitude * d * (f64::from(cfg.harmonic) * phi).cos())
}

pub fn fill_color(cfg: &SceneConfig, a: f64) -> Rgb {
    let mut c = [0.0; 3];
    for (k, v) in c.iter_mut().enumerate() {
        *v = a * cfg.color_a1[k] + (1.0 - a) * cfg.color_a0[k];
    }
    c
}

pub fn background_color(cfg: &SceneConfig, seed: u64) -> Rgb {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = cfg.background_range;
    let g = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
    [g; 3]
}

/// Boundary parameters of the oracle keypoints, `φₖ = 2πk / K`.
pub fn keypoint_angles(cfg: &SceneConfig) -> Vec<f64> {
    (0..cfg.keypoint_count)
        .map(|k| std::f64::consts::TAU * k as f64 / cfg.keypoint_count as f64)
        .collect()
}

/// Oracle keypoints of an object in normalized image coordinates.
pub fn keypoints(desc: &SceneDescriptor, cfg: &SceneConfig) -> Vec<Point> {
    let place = desc.placement();
    keypoint_angles(cfg)
        .into_iter()
        .map(|phi| {
            let r = boundary_radius(cfg, desc.d, phi);
            place.apply([r * phi.cos(), r * phi.sin()])
        })
        .collect()
}

/// Rendered object: image, interior mask, oracle keypoints.
#[derive(Debug, Clone)]
pub struct Rendering {
    pub image: Image,
    pub mask: Mask,
    pub keypoints: Vec<Point>,
}

pub fn render(
    desc: &SceneDescriptor,
    width: usize,
    height: usize,
    cfg: &SceneConfig,
) -> Result<Rendering> {
    desc.validate(cfg)?;
    let to_object = desc.placement().inverse()?;
    let inside = |col: f64, row: f64| {
        let o = to_object.apply([pixel_to_norm(col, width), pixel_to_norm(row, height)]);
        o[0].hypot(o[1]) <= boundary_radius(cfg, desc.d, o[1].atan2(o[0]))
    };
    let mask = Mask::from_fn(width, height, |col, row| inside(col as f64, row as f64))?;
    let fg = fill_color(cfg, desc.a);
    let bg = background_color(cfg, desc.background_seed);
    // Mask pixels carry the exact fill; outside pixels get the fill in
    // proportion to sub-sample coverage, which softens the edge for
    // resampling.
    let n = cfg.supersampling;
    let offsets: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 - 0.5).collect();
    let image = Image::from_fn(width, height, |col, row| {
        if mask.get(col, row) {
            return fg;
        }
        let mut hits = 0usize;
        for dy in &offsets {
            for dx in &offsets {
                hits += usize::from(inside(col as f64 + dx, row as f64 + dy));
            }
        }
        match hits {
            0 => bg,
            h if h == n * n => fg,
            h => {
                let c = h as f64 / (n * n) as f64;
                [0, 1, 2].map(|k| bg[k] + c * (fg[k] - bg[k]))
            }
        }
    })?;
    Ok(Rendering {
        image,
        mask,
        keypoints: keypoints(desc, cfg),
    })
}

/// Source keypoints paired with the matching target keypoints.
pub fn oracle_correspondences(
    src: &SceneDescriptor,
    tar: &SceneDescriptor,
    cfg: &SceneConfig,
) -> Correspondences {
    Correspondences::from_points(&keypoints(src, cfg), &keypoints(tar, cfg))
        .expect("both objects carry the same number of keypoints")
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo < hi {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Draws every property independently from the configured ranges, with
/// `sy = sx`.
pub fn random_descriptor(rng: &mut impl Rng, cfg: &SceneConfig) -> SceneDescriptor {
    let d = uniform(rng, cfg.shape_range);
    let theta = uniform(rng, cfg.rotation_range_deg);
    let tx = uniform(rng, cfg.translation_range);
    let ty = uniform(rng, cfg.translation_range);
    let sx = uniform(rng, cfg.scale_range);
    let a = uniform(rng, cfg.appearance_range);
    SceneDescriptor {
        d,
        sx,
        sy: sx,
        theta,
        tx,
        ty,
        a,
        background_seed: rng.gen(),
    }
}

/// A single generative property, for controlled single-factor pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Factor {
    Shape,
    Scale,
    Rotation,
    TranslationX,
    TranslationY,
    Appearance,
}

impl Factor {
    pub const ALL: [Factor; 6] = [
        Factor::Shape,
        Factor::Scale,
        Factor::Rotation,
        Factor::TranslationX,
        Factor::TranslationY,
        Factor::Appearance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Shape => "shape",
            Factor::Scale => "scale",
            Factor::Rotation => "rotation",
            Factor::TranslationX => "translation_x",
            Factor::TranslationY => "translation_y",
            Factor::Appearance => "appearance",
        }
    }
}

/// `count` pairs whose target differs from the source in `factor` only
/// (scale changes `sx` and `sy` together). Sources are random apart from
/// the swept factor's reference: shape pairs start at `d = 0`, appearance
/// pairs at `a = 0`. Shape, rotation and scale pairs are centred at the
/// origin, so the affine translation stays zero and the deformation sits at
/// the same place relative to the TPS lattice.
pub fn single_factor_pairs(
    factor: Factor,
    count: usize,
    seed: u64,
    cfg: &SceneConfig,
) -> Vec<(SceneDescriptor, SceneDescriptor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut src = random_descriptor(&mut rng, cfg);
            match factor {
                Factor::Shape => (src.d, src.tx, src.ty) = (0.0, 0.0, 0.0),
                Factor::Scale | Factor::Rotation => (src.tx, src.ty) = (0.0, 0.0),
                Factor::Appearance => src.a = cfg.appearance_range[0],
                Factor::TranslationX | Factor::TranslationY => {}
            }
            let mut tar = src;
            match factor {
                Factor::Shape => tar.d = uniform(&mut rng, cfg.shape_range),
                Factor::Scale => {
                    tar.sx = uniform(&mut rng, cfg.scale_range);
                    tar.sy = tar.sx;
                }
                Factor::Rotation => tar.theta = uniform(&mut rng, cfg.rotation_range_deg),
                Factor::TranslationX => tar.tx = uniform(&mut rng, cfg.translation_range),
                Factor::TranslationY => tar.ty = uniform(&mut rng, cfg.translation_range),
                Factor::Appearance => tar.a = uniform(&mut rng, cfg.appearance_range),
            }
            (src, tar)
        })
        .collect()
}

/// Pairs that share shape, appearance and background but differ in pose and
/// scale, each drawn independently.
pub fn pose_only_pairs(
    count: usize,
    seed: u64,
    cfg: &SceneConfig,
) -> Vec<(SceneDescriptor, SceneDescriptor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let src = random_descriptor(&mut rng, cfg);
            let other = random_descriptor(&mut rng, cfg);
            let tar = SceneDescriptor {
                sx: other.sx,
                sy: other.sy,
                theta: other.theta,
                tx: other.tx,
                ty: other.ty,
                ..src
            };
            (src, tar)
        })
        .collect()
}

/// One line of the dataset manifest. Paths are relative to the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub source_id: usize,
    pub target_id: usize,
    pub source: SceneDescriptor,
    pub target: SceneDescriptor,
    pub source_image: String,
    pub source_mask: String,
    pub target_image: String,
    pub keypoints: String,
    pub keypoint_count: usize,
    pub gt: GroundTruthDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONFIG_FILE: &str = "scene.toml";

impl DatasetManifest {
    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Reads a manifest. Malformed lines and missing referenced files are
    /// reported with their 1-based line number.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| bad(e.to_string().replace(" at line 1 column ", " at column ")))?;
            for rel in [
                &entry.source_image,
                &entry.source_mask,
                &entry.target_image,
                &entry.keypoints,
            ] {
                if !root.join(rel).is_file() {
                    return Err(bad(format!("referenced file {rel} does not exist")));
                }
            }
            entries.push(entry);
        }
        Ok(DatasetManifest { root, entries })
    }
}

fn image_name(id: usize) -> String {
    format!("images/img_{id:05}.png")
}

fn mask_name(id: usize) -> String {
    format!("masks/mask_{id:05}.png")
}

fn keypoint_name(pair: usize) -> String {
    format!("keypoints/pair_{pair:05}.json")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Samples `n_images` objects, renders them, pairs them into `pair_count`
/// disjoint source/target pairs and writes images, masks, keypoint files,
/// the generator config and the manifest under `out_dir`.
///
/// Object `i` is drawn from its own RNG stream, so output does not depend
/// on thread scheduling.
pub fn sample_dataset(
    n_images: usize,
    pair_count: usize,
    seed: u64,
    width: usize,
    height: usize,
    out_dir: impl AsRef<Path>,
    cfg: &SceneConfig,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    if pair_count == 0 || 2 * pair_count > n_images {
        return Err(Error::InvalidArgument(format!(
            "pair count {pair_count} must be between 1 and half the image count ({n_images})"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let out = out_dir.as_ref();
    for sub in ["images", "masks", "keypoints"] {
        create_dir(&out.join(sub))?;
    }

    let descriptors: Vec<SceneDescriptor> = (0..n_images)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            random_descriptor(&mut rng, cfg)
        })
        .collect();

    descriptors
        .par_iter()
        .enumerate()
        .try_for_each(|(i, desc)| -> Result<()> {
            let r = render(desc, width, height, cfg)?;
            write_image(out.join(image_name(i)), &r.image)?;
            write_mask(out.join(mask_name(i)), &r.mask)
        })?;

    let mut order: Vec<usize> = (0..n_images).collect();
    let mut pair_rng = ChaCha8Rng::seed_from_u64(seed);
    pair_rng.set_stream(u64::MAX);
    order.shuffle(&mut pair_rng);

    let mut entries = Vec::with_capacity(pair_count);
    for k in 0..pair_count {
        let (s, t) = (order[2 * k], order[2 * k + 1]);
        let (src, tar) = (descriptors[s], descriptors[t]);
        oracle_correspondences(&src, &tar, cfg).save(out.join(keypoint_name(k)))?;
        entries.push(ManifestEntry {
            index: k,
            source_id: s,
            target_id: t,
            source: src,
            target: tar,
            source_image: image_name(s),
            source_mask: mask_name(s),
            target_image: image_name(t),
            keypoints: keypoint_name(k),
            keypoint_count: cfg.keypoint_count,
            gt: gt_difference(&src, &tar),
        });
    }

    let config_path = out.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_toml()).map_err(|e| Error::io(&config_path, e))?;

    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        entries,
    };
    let path = manifest.path();
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(manifest.to_jsonl().as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
