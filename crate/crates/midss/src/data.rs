//! Synthetic multi-domain dataset generation plus PGM/manifest ingestion.
//!
//! Every sample is a nested-ellipse anatomy rendered to a label map and an
//! intensity field, then pushed through a per-domain style (gamma curve,
//! optional contrast flip, band-limited texture, white noise). Geometry is
//! shared across domains; only style differs, so domain shift is purely
//! stylistic.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{Grid, OneHotMap};
use crate::rng::SplitRng;

// Geometry ranges for the synthetic anatomy. Under these constants the
// foreground fraction of every label stays within [0.05, 0.45]; the bounds
// are verified empirically in the test suite.
const CENTER_JITTER: f64 = 0.15;
const AXIS_MIN: f64 = 0.35;
const AXIS_MAX: f64 = 0.65;
const INNER_MIN: f64 = 0.4;
const INNER_MAX: f64 = 0.7;
const EDGE_SOFTNESS_PX: f64 = 1.0;
const TEXTURE_WAVES: usize = 6;

// Per-sample rng sub-streams.
const STREAM_ANATOMY: u64 = 0;
const STREAM_TEXTURE: u64 = 1;
const STREAM_NOISE: u64 = 2;

/// Style of one data center: how the shared anatomy gets rendered there.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DomainStyle {
    pub domain_id: u32,
    /// Intensity exponent applied to the base field; > 0.
    pub gamma: f64,
    /// Negate intensities (bright organs become dark).
    pub contrast_flip: bool,
    /// Scale of the band-limited low-frequency texture.
    pub texture_amplitude: f64,
    /// Fraction of the spectrum (0, 0.5] the texture may occupy.
    pub texture_cutoff_fraction: f64,
    /// White noise standard deviation.
    pub noise_sigma: f64,
}

impl DomainStyle {
    pub fn validate(&self) -> Result<()> {
        if self.gamma <= 0.0 {
            return Err(Error::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.texture_cutoff_fraction > 0.0 && self.texture_cutoff_fraction <= 0.5) {
            return Err(Error::Config(format!(
                "texture_cutoff_fraction must be in (0, 0.5], got {}",
                self.texture_cutoff_fraction
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Identity style: the image is exactly the renormalized anatomy field.
    pub fn identity(domain_id: u32) -> Self {
        Self {
            domain_id,
            gamma: 1.0,
            contrast_flip: false,
            texture_amplitude: 0.0,
            texture_cutoff_fraction: 0.25,
            noise_sigma: 0.0,
        }
    }

    /// Stock style set: domain 1 is mild, domain 2 inverts contrast with a
    /// steep gamma, domain 3 is washed out and textured; further domains
    /// cycle gamma variations.
    pub fn default_set(k: u32) -> Vec<DomainStyle> {
        (1..=k)
            .map(|d| match d {
                1 => DomainStyle {
                    domain_id: 1,
                    gamma: 1.0,
                    contrast_flip: false,
                    texture_amplitude: 0.05,
                    texture_cutoff_fraction: 0.25,
                    noise_sigma: 0.01,
                },
                2 => DomainStyle {
                    domain_id: 2,
                    gamma: 1.8,
                    contrast_flip: true,
                    texture_amplitude: 0.15,
                    texture_cutoff_fraction: 0.25,
                    noise_sigma: 0.02,
                },
                3 => DomainStyle {
                    domain_id: 3,
                    gamma: 0.6,
                    contrast_flip: false,
                    texture_amplitude: 0.3,
                    texture_cutoff_fraction: 0.2,
                    noise_sigma: 0.05,
                },
                _ => DomainStyle {
                    domain_id: d,
                    gamma: 0.8 + 0.3 * (d % 4) as f64,
                    contrast_flip: d % 2 == 0,
                    texture_amplitude: 0.1 + 0.05 * (d % 3) as f64,
                    texture_cutoff_fraction: 0.25,
                    noise_sigma: 0.02,
                },
            })
            .collect()
    }
}

/// One image with (optionally) its training label. `diag_label` keeps the
/// generator's ground truth on unlabeled records for diagnostics only; the
/// training loop never reads it as supervision.
#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub image: Grid,
    pub label: Option<OneHotMap>,
    pub diag_label: Option<OneHotMap>,
    pub domain_id: u32,
    pub case_id: u64,
}

/// Shape of a generated dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Number of domains K.
    pub domains: u32,
    /// Domain the labeled pool is drawn from (1..=K).
    pub labeled_domain: u32,
    pub n_labeled: usize,
    pub n_unlabeled_per_domain: usize,
    pub n_test_per_domain: usize,
    pub height: usize,
    pub width: usize,
    /// Class count including background; >= 2.
    pub classes: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            domains: 3,
            labeled_domain: 1,
            n_labeled: 8,
            n_unlabeled_per_domain: 16,
            n_test_per_domain: 8,
            height: 16,
            width: 16,
            classes: 2,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domains == 0 {
            return Err(Error::Config("domain count must be >= 1".into()));
        }
        if !(1..=self.domains).contains(&self.labeled_domain) {
            return Err(Error::Config(format!(
                "labeled_domain {} outside 1..={}",
                self.labeled_domain, self.domains
            )));
        }
        if self.n_labeled == 0 {
            return Err(Error::Config("n_labeled must be >= 1".into()));
        }
        let m = self.domains as usize * self.n_unlabeled_per_domain;
        if m <= self.n_labeled {
            return Err(Error::Config(format!(
                "unlabeled pool ({m}) must exceed labeled pool ({})",
                self.n_labeled
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least background + one foreground class".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("image dims must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub labeled: Vec<SampleRecord>,
    pub unlabeled: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

struct AnatomyParams {
    cy: f64,
    cx: f64,
    axis_y: f64,
    axis_x: f64,
    angle: f64,
    inner_scale: f64,
}

fn sample_anatomy(rng: &mut SplitRng, h: usize, w: usize) -> AnatomyParams {
    let half = h.min(w) as f64 / 2.0;
    AnatomyParams {
        cy: (h as f64 - 1.0) / 2.0 + rng.uniform_in(-CENTER_JITTER, CENTER_JITTER) * h as f64,
        cx: (w as f64 - 1.0) / 2.0 + rng.uniform_in(-CENTER_JITTER, CENTER_JITTER) * w as f64,
        axis_y: rng.uniform_in(AXIS_MIN, AXIS_MAX) * half,
        axis_x: rng.uniform_in(AXIS_MIN, AXIS_MAX) * half,
        angle: rng.uniform_in(0.0, std::f64::consts::PI),
        inner_scale: rng.uniform_in(INNER_MIN, INNER_MAX),
    }
}

/// Normalized elliptical radius of (y, x): 1 on the boundary.
fn ellipse_radius(p: &AnatomyParams, y: f64, x: f64, scale: f64) -> f64 {
    let (sin_a, cos_a) = p.angle.sin_cos();
    let dy = y - p.cy;
    let dx = x - p.cx;
    let ry = (cos_a * dy + sin_a * dx) / (p.axis_y * scale);
    let rx = (-sin_a * dy + cos_a * dx) / (p.axis_x * scale);
    (ry * ry + rx * rx).sqrt()
}

/// Soft inside-ness in [0, 1] with an edge a couple of pixels wide.
fn soft_edge(p: &AnatomyParams, rho: f64, scale: f64) -> f64 {
    let d = (1.0 - rho) * p.axis_y.min(p.axis_x) * scale;
    (d / (2.0 * EDGE_SOFTNESS_PX) + 0.5).clamp(0.0, 1.0)
}

/// Label map and base intensity field for a case, before any styling.
/// Deterministic in (dataset seed, case_id) alone.
pub fn anatomy_for_case(spec: &DatasetSpec, case_id: u64) -> (OneHotMap, Grid) {
    let mut rng = SplitRng::new(spec.seed).fork(case_id).fork(STREAM_ANATOMY);
    let (h, w, c) = (spec.height, spec.width, spec.classes);
    let p = sample_anatomy(&mut rng, h, w);
    let mut classes = vec![0usize; h * w];
    let mut base = Grid::zeros(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let rho_out = ellipse_radius(&p, y as f64, x as f64, 1.0);
            let rho_in = ellipse_radius(&p, y as f64, x as f64, p.inner_scale);
            let k = if c >= 3 && rho_in <= 1.0 {
                2
            } else if rho_out <= 1.0 {
                1
            } else {
                0
            };
            classes[y * w + x] = k;
            let v = 0.15 + 0.5 * soft_edge(&p, rho_out, 1.0)
                + 0.25 * soft_edge(&p, rho_in, p.inner_scale);
            base.set(y, x, 0, v);
        }
    }
    let label = OneHotMap::from_classes(h, w, c, &classes).expect("classes in range");
    (label, base)
}

/// Band-limited texture: a handful of cosine waves with integer frequencies
/// below `cutoff` of the spectrum and random phases, unit-ish variance.
fn texture_field(rng: &mut SplitRng, h: usize, w: usize, cutoff: f64) -> Grid {
    let f_max_y = ((cutoff * h as f64).floor() as i64).max(1);
    let f_max_x = ((cutoff * w as f64).floor() as i64).max(1);
    let mut waves = Vec::with_capacity(TEXTURE_WAVES);
    for _ in 0..TEXTURE_WAVES {
        let (fy, fx) = loop {
            let fy = rng.below((2 * f_max_y + 1) as usize) as i64 - f_max_y;
            let fx = rng.below((2 * f_max_x + 1) as usize) as i64 - f_max_x;
            if fy != 0 || fx != 0 {
                break (fy, fx);
            }
        };
        let phase = rng.uniform_in(0.0, std::f64::consts::TAU);
        waves.push((fy as f64, fx as f64, phase));
    }
    let norm = 1.0 / (TEXTURE_WAVES as f64 / 2.0).sqrt();
    let mut out = Grid::zeros(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(fy, fx, phase) in &waves {
                acc += (std::f64::consts::TAU * (fy * y as f64 / h as f64 + fx * x as f64 / w as f64)
                    + phase)
                    .cos();
            }
            out.set(y, x, 0, acc * norm);
        }
    }
    out
}

/// Render one styled sample. Labels are fixed before styling and never
/// altered by it.
pub fn generate_sample(
    spec: &DatasetSpec,
    style: &DomainStyle,
    case_id: u64,
    with_label: bool,
) -> SampleRecord {
    let (label, base) = anatomy_for_case(spec, case_id);
    let case_rng = SplitRng::new(spec.seed).fork(case_id);

    let sign = if style.contrast_flip { -1.0 } else { 1.0 };
    let mut img = base.map(|v| sign * v.max(0.0).powf(style.gamma));
    if style.texture_amplitude > 0.0 {
        let mut trng = case_rng.fork(STREAM_TEXTURE);
        let tex = texture_field(&mut trng, spec.height, spec.width, style.texture_cutoff_fraction);
        for (o, t) in img.data_mut().iter_mut().zip(tex.data()) {
            *o += style.texture_amplitude * t;
        }
    }
    if style.noise_sigma > 0.0 {
        let mut nrng = case_rng.fork(STREAM_NOISE);
        for o in img.data_mut() {
            *o += style.noise_sigma * nrng.normal();
        }
    }
    let image = img.renormalized();
    SampleRecord {
        image,
        label: if with_label { Some(label.clone()) } else { None },
        diag_label: Some(label),
        domain_id: style.domain_id,
        case_id,
    }
}

/// Generate the three splits. Sample i comes from the fork of the dataset
/// seed by its case id, so output is independent of scheduling; labeled and
/// test splits are disjoint in case id by construction.
pub fn generate_dataset(spec: &DatasetSpec, styles: &[DomainStyle]) -> Result<Dataset> {
    spec.validate()?;
    if styles.len() != spec.domains as usize {
        return Err(Error::Config(format!(
            "expected {} styles, got {}",
            spec.domains,
            styles.len()
        )));
    }
    for s in styles {
        s.validate()?;
    }
    let style_of = |domain_id: u32| -> &DomainStyle {
        styles.iter().find(|s| s.domain_id == domain_id).expect("validated below")
    };
    for d in 1..=spec.domains {
        if !styles.iter().any(|s| s.domain_id == d) {
            return Err(Error::Config(format!("no style for domain {d}")));
        }
    }

    // (domain, with_label, split) per case id, in one flat plan.
    #[derive(Clone, Copy, PartialEq)]
    enum Split {
        Labeled,
        Unlabeled,
        Test,
    }
    let mut plan: Vec<(u32, Split)> = Vec::new();
    for _ in 0..spec.n_labeled {
        plan.push((spec.labeled_domain, Split::Labeled));
    }
    for d in 1..=spec.domains {
        for _ in 0..spec.n_unlabeled_per_domain {
            plan.push((d, Split::Unlabeled));
        }
    }
    for d in 1..=spec.domains {
        for _ in 0..spec.n_test_per_domain {
            plan.push((d, Split::Test));
        }
    }

    let records = exec::map_indexed(plan.len(), |i| {
        let (domain, split) = plan[i];
        let with_label = !matches!(split, Split::Unlabeled);
        generate_sample(spec, style_of(domain), i as u64, with_label)
    });

    let mut out = Dataset { labeled: Vec::new(), unlabeled: Vec::new(), test: Vec::new() };
    for (rec, (_, split)) in records.into_iter().zip(plan.iter()) {
        match split {
            Split::Labeled => out.labeled.push(rec),
            Split::Unlabeled => out.unlabeled.push(rec),
            Split::Test => out.test.push(rec),
        }
    }
    Ok(out)
}

/// Uniform with-replacement batch draw; unlabeled draws come from the pooled
/// set with no domain balancing.
pub fn sample_batch<'a>(
    labeled: &'a [SampleRecord],
    unlabeled: &'a [SampleRecord],
    batch_labeled: usize,
    batch_unlabeled: usize,
    rng: &mut SplitRng,
) -> Result<(Vec<&'a SampleRecord>, Vec<&'a SampleRecord>)> {
    if labeled.is_empty() {
        return Err(Error::Config("labeled pool is empty".into()));
    }
    if batch_unlabeled > 0 && unlabeled.is_empty() {
        return Err(Error::Config("unlabeled pool is empty".into()));
    }
    let l = (0..batch_labeled).map(|_| &labeled[rng.below(labeled.len())]).collect();
    let u = (0..batch_unlabeled).map(|_| &unlabeled[rng.below(unlabeled.len())]).collect();
    Ok((l, u))
}

// ---------------------------------------------------------------------------
// PGM (P5) image and label I/O
// ---------------------------------------------------------------------------

struct PgmHeader {
    width: usize,
    height: usize,
    payload_offset: usize,
}

fn parse_pgm_header(bytes: &[u8]) -> Result<PgmHeader> {
    let err = |offset: usize, msg: &str| Error::Parse { offset, msg: msg.into() };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(err(0, "expected P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comment lines.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(err(pos, "truncated header")),
            }
        }
        let start = pos;
        while let Some(b) = bytes.get(pos) {
            if b.is_ascii_digit() {
                pos += 1;
            } else {
                break;
            }
        }
        if pos == start {
            return Err(err(pos, "expected decimal field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are ascii");
        *field = text.parse().map_err(|_| err(start, "field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(err(pos, "only maxval 255 is supported"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err(pos, "expected single whitespace before payload")),
    }
    if width == 0 || height == 0 {
        return Err(err(0, "zero image dimension"));
    }
    Ok(PgmHeader { width, height, payload_offset: pos })
}

/// Load an 8-bit binary PGM; pixel v maps to 2 v / 255 - 1.
pub fn load_pgm(path: &Path) -> Result<Grid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_pgm_header(&bytes)?;
    let n = header.width * header.height;
    let payload = &bytes[header.payload_offset..];
    if payload.len() < n {
        return Err(Error::Parse {
            offset: header.payload_offset + payload.len(),
            msg: format!("payload truncated: expected {n} bytes, got {}", payload.len()),
        });
    }
    let data = payload[..n].iter().map(|&b| 2.0 * b as f64 / 255.0 - 1.0).collect();
    Grid::new(header.height, header.width, 1, data)
}

/// Save a single-channel image as binary PGM; inverts the load map with
/// round-half-up.
pub fn save_pgm(image: &Grid, path: &Path) -> Result<()> {
    if image.channels() != 1 {
        return Err(Error::Shape(format!(
            "PGM wants a single channel, got {}",
            image.channels()
        )));
    }
    let mut out = Vec::with_capacity(image.data().len() + 32);
    write!(out, "P5\n{} {}\n255\n", image.width(), image.height())
        .expect("writing to Vec cannot fail");
    for &v in image.data() {
        let byte = ((v + 1.0) * 255.0 / 2.0 + 0.5).floor().clamp(0.0, 255.0) as u8;
        out.push(byte);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Save a label map as PGM with raw class indices {0..C-1}.
pub fn save_label_pgm(label: &OneHotMap, path: &Path) -> Result<()> {
    let g = label.grid();
    let mut out = Vec::with_capacity(g.height() * g.width() + 32);
    write!(out, "P5\n{} {}\n255\n", g.width(), g.height()).expect("writing to Vec cannot fail");
    for y in 0..g.height() {
        for x in 0..g.width() {
            out.push(label.class_at(y, x) as u8);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load a class-index PGM back into a one-hot map.
pub fn load_label_pgm(path: &Path, classes: usize) -> Result<OneHotMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_pgm_header(&bytes)?;
    let n = header.width * header.height;
    let payload = &bytes[header.payload_offset..];
    if payload.len() < n {
        return Err(Error::Parse {
            offset: header.payload_offset + payload.len(),
            msg: "label payload truncated".into(),
        });
    }
    let idx: Vec<usize> = payload[..n].iter().map(|&b| b as usize).collect();
    OneHotMap::from_classes(header.height, header.width, classes, &idx)
}

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub label_path: Option<String>,
    pub domain_id: u32,
    pub case_id: u64,
    pub split: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub records: Vec<ManifestRecord>,
}

/// Write images, labels, and manifest.json under `dir`.
pub fn write_dataset(dataset: &Dataset, spec: &DatasetSpec, dir: &Path) -> Result<Manifest> {
    let images = dir.join("images");
    let labels = dir.join("labels");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    std::fs::create_dir_all(&labels).map_err(|e| Error::io(&labels, e))?;

    let mut records = Vec::new();
    let mut dump = |recs: &[SampleRecord], split: &str| -> Result<()> {
        for r in recs {
            let img_rel = format!("images/case_{:05}.pgm", r.case_id);
            save_pgm(&r.image, &dir.join(&img_rel))?;
            // Ground truth is written for every split; unlabeled records keep
            // theirs for diagnostics only and the loader will not surface it
            // as supervision.
            let label_rel = match r.diag_label.as_ref().or(r.label.as_ref()) {
                Some(l) => {
                    let rel = format!("labels/case_{:05}.pgm", r.case_id);
                    save_label_pgm(l, &dir.join(&rel))?;
                    Some(rel)
                }
                None => None,
            };
            records.push(ManifestRecord {
                path: img_rel,
                label_path: label_rel,
                domain_id: r.domain_id,
                case_id: r.case_id,
                split: split.to_string(),
            });
        }
        Ok(())
    };
    dump(&dataset.labeled, "labeled")?;
    dump(&dataset.unlabeled, "unlabeled")?;
    dump(&dataset.test, "test")?;

    let manifest = Manifest { spec: spec.clone(), records };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Load a dataset back from its manifest. Labeled/test records surface their
/// labels; unlabeled records only keep theirs as `diag_label`.
pub fn load_dataset(manifest_path: &Path) -> Result<(Dataset, DatasetSpec)> {
    let file = std::fs::File::open(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::Parse { offset: 0, msg: format!("manifest: {e}") })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut dataset = Dataset { labeled: Vec::new(), unlabeled: Vec::new(), test: Vec::new() };
    for rec in &manifest.records {
        let image = load_pgm(&base.join(&rec.path))?;
        let gt = match &rec.label_path {
            Some(p) => Some(load_label_pgm(&base.join(p), manifest.spec.classes)?),
            None => None,
        };
        let record = SampleRecord {
            image,
            label: if rec.split == "unlabeled" { None } else { gt.clone() },
            diag_label: gt,
            domain_id: rec.domain_id,
            case_id: rec.case_id,
        };
        match rec.split.as_str() {
            "labeled" => dataset.labeled.push(record),
            "unlabeled" => dataset.unlabeled.push(record),
            "test" => dataset.test.push(record),
            other => {
                return Err(Error::Parse {
                    offset: 0,
                    msg: format!("unknown split `{other}` in manifest"),
                })
            }
        }
    }
    Ok((dataset, manifest.spec))
}

/// Split invariants that hold for every generated dataset.
pub fn check_split_invariants(dataset: &Dataset) -> Result<()> {
    let labeled_domains: BTreeSet<u32> = dataset.labeled.iter().map(|r| r.domain_id).collect();
    if labeled_domains.len() != 1 {
        return Err(Error::Config(format!(
            "labeled split spans {} domains",
            labeled_domains.len()
        )));
    }
    let train_ids: BTreeSet<u64> = dataset
        .labeled
        .iter()
        .chain(dataset.unlabeled.iter())
        .map(|r| r.case_id)
        .collect();
    for r in &dataset.test {
        if train_ids.contains(&r.case_id) {
            return Err(Error::Config(format!("case {} appears in train and test", r.case_id)));
        }
    }
    Ok(())
}

/// Convenience: line-buffered read of a manifest's record count, for sweep
/// resumption checks.
pub fn manifest_exists(dir: &Path) -> bool {
    dir.join("manifest.json").exists()
        && std::io::BufReader::new(
            std::fs::File::open(dir.join("manifest.json")).expect("checked exists"),
        )
        .lines()
        .next()
        .is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_spec() -> DatasetSpec {
        DatasetSpec {
            domains: 3,
            labeled_domain: 1,
            n_labeled: 4,
            n_unlabeled_per_domain: 5,
            n_test_per_domain: 3,
            height: 16,
            width: 16,
            classes: 2,
            seed: 7,
        }
    }

    fn quick_styles() -> Vec<DomainStyle> {
        vec![
            DomainStyle::identity(1),
            DomainStyle {
                domain_id: 2,
                gamma: 1.8,
                contrast_flip: true,
                texture_amplitude: 0.15,
                texture_cutoff_fraction: 0.25,
                noise_sigma: 0.02,
            },
            DomainStyle {
                domain_id: 3,
                gamma: 0.6,
                contrast_flip: false,
                texture_amplitude: 0.3,
                texture_cutoff_fraction: 0.2,
                noise_sigma: 0.05,
            },
        ]
    }

    #[test]
    fn identity_style_yields_renormalized_anatomy() {
        let spec = quick_spec();
        let rec = generate_sample(&spec, &DomainStyle::identity(1), 0, true);
        let (_, base) = anatomy_for_case(&spec, 0);
        assert_eq!(rec.image, base.renormalized());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = quick_spec();
        let styles = quick_styles();
        let a = generate_dataset(&spec, &styles).unwrap();
        let b = generate_dataset(&spec, &styles).unwrap();
        for (x, y) in a.labeled.iter().zip(&b.labeled) {
            assert_eq!(x.image, y.image);
        }
        for (x, y) in a.unlabeled.iter().zip(&b.unlabeled) {
            assert_eq!(x.image, y.image);
        }
    }

    #[test]
    fn split_structure_and_invariants() {
        let spec = quick_spec();
        let d = generate_dataset(&spec, &quick_styles()).unwrap();
        assert_eq!(d.labeled.len(), 4);
        assert_eq!(d.unlabeled.len(), 15);
        assert_eq!(d.test.len(), 9);
        assert!(d.labeled.iter().all(|r| r.domain_id == 1 && r.label.is_some()));
        assert!(d.unlabeled.iter().all(|r| r.label.is_none() && r.diag_label.is_some()));
        let unl_domains: BTreeSet<u32> = d.unlabeled.iter().map(|r| r.domain_id).collect();
        assert_eq!(unl_domains, BTreeSet::from([1, 2, 3]));
        check_split_invariants(&d).unwrap();
    }

    #[test]
    fn style_count_mismatch_is_config_error() {
        let spec = quick_spec();
        let styles = vec![DomainStyle::identity(1)];
        assert!(matches!(generate_dataset(&spec, &styles), Err(Error::Config(_))));
    }

    #[test]
    fn foreground_fraction_in_declared_range() {
        // 1000 anatomies, every label within [0.05, 0.45] foreground.
        let spec = DatasetSpec { height: 16, width: 16, ..quick_spec() };
        for case in 0..1000u64 {
            let (label, _) = anatomy_for_case(&spec, case);
            let fg: usize = (0..16)
                .flat_map(|y| (0..16).map(move |x| (y, x)))
                .filter(|&(y, x)| label.class_at(y, x) != 0)
                .count();
            let frac = fg as f64 / 256.0;
            assert!((0.05..=0.45).contains(&frac), "case {case}: fraction {frac}");
        }
    }

    #[test]
    fn styling_preserves_labels() {
        let spec = quick_spec();
        for case in 0..10u64 {
            let (label, _) = anatomy_for_case(&spec, case);
            for style in quick_styles() {
                let rec = generate_sample(&spec, &style, case, true);
                assert_eq!(rec.label.as_ref().unwrap(), &label);
            }
        }
    }

    #[test]
    fn three_class_anatomy_nests() {
        let spec = DatasetSpec { classes: 3, ..quick_spec() };
        let mut saw_inner = false;
        for case in 0..20u64 {
            let (label, _) = anatomy_for_case(&spec, case);
            for y in 0..16 {
                for x in 0..16 {
                    if label.class_at(y, x) == 2 {
                        saw_inner = true;
                        // Inner class only occurs inside the outer ellipse:
                        // neighbors are never background right next to class 2.
                        let neighbors_bg = [(y.wrapping_sub(1), x), (y + 1, x)]
                            .iter()
                            .filter(|&&(ny, nx)| ny < 16 && nx < 16)
                            .all(|&(ny, nx)| label.class_at(ny, nx) == 0);
                        assert!(!neighbors_bg);
                    }
                }
            }
        }
        assert!(saw_inner, "expected some inner-class pixels across 20 cases");
    }

    #[test]
    fn batch_shapes_and_determinism() {
        let spec = quick_spec();
        let d = generate_dataset(&spec, &quick_styles()).unwrap();
        let (l1, u1) = sample_batch(&d.labeled, &d.unlabeled, 4, 4, &mut SplitRng::new(3)).unwrap();
        assert_eq!(l1.len(), 4);
        assert_eq!(u1.len(), 4);
        let (l2, u2) = sample_batch(&d.labeled, &d.unlabeled, 4, 4, &mut SplitRng::new(3)).unwrap();
        for (a, b) in l1.iter().zip(&l2) {
            assert_eq!(a.case_id, b.case_id);
        }
        for (a, b) in u1.iter().zip(&u2) {
            assert_eq!(a.case_id, b.case_id);
        }
        assert!(sample_batch(&[], &d.unlabeled, 1, 1, &mut SplitRng::new(0)).is_err());
    }

    #[test]
    fn unlabeled_draws_are_domain_uniform() {
        let spec = quick_spec();
        let d = generate_dataset(&spec, &quick_styles()).unwrap();
        let mut rng = SplitRng::new(5);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            let (_, u) = sample_batch(&d.labeled, &d.unlabeled, 0, 1, &mut rng).unwrap();
            counts[(u[0].domain_id - 1) as usize] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 1.0 / 3.0).abs() < 0.05 / 3.0 + 0.0167, "freq {freq}");
        }
    }

    #[test]
    fn pgm_pixel_mapping_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        std::fs::write(&path, [b"P5\n3 1\n255\n".as_ref(), &[0u8, 128, 255]].concat()).unwrap();
        let g = load_pgm(&path).unwrap();
        assert_eq!(g.get(0, 0, 0), -1.0);
        assert!((g.get(0, 1, 0) - (2.0 * 128.0 / 255.0 - 1.0)).abs() < 1e-12);
        assert!((g.get(0, 1, 0) - 0.00392).abs() < 1e-5);
        assert_eq!(g.get(0, 2, 0), 1.0);
    }

    #[test]
    fn pgm_round_trip_bounded_by_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.pgm");
        let mut rng = SplitRng::new(6);
        let img =
            Grid::new(5, 7, 1, (0..35).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap();
        save_pgm(&img, &path).unwrap();
        let back = load_pgm(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pgm_parse_errors_carry_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P6\n1 1\n255\n\0").unwrap();
        match load_pgm(&path) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&path, b"P5\n4 4\n255\n\0\0").unwrap();
        match load_pgm(&path) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_round_trip() {
        let spec = quick_spec();
        let d = generate_dataset(&spec, &quick_styles()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&d, &spec, dir.path()).unwrap();
        assert_eq!(
            manifest.records.iter().filter(|r| r.split == "labeled").count(),
            spec.n_labeled
        );
        let (back, spec2) = load_dataset(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(spec2.domains, spec.domains);
        assert_eq!(back.labeled.len(), d.labeled.len());
        assert_eq!(back.unlabeled.len(), d.unlabeled.len());
        assert_eq!(back.test.len(), d.test.len());
        assert!(back.unlabeled.iter().all(|r| r.label.is_none()));
        // Images survive the byte quantization.
        for (a, b) in d.labeled.iter().zip(&back.labeled) {
            for (x, y) in a.image.data().iter().zip(b.image.data()) {
                assert!((x - y).abs() <= 1.0 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn parallel_generation_matches_sequential() {
        let spec = quick_spec();
        let styles = quick_styles();
        crate::exec::force_sequential(true);
        let seq = generate_dataset(&spec, &styles).unwrap();
        crate::exec::force_sequential(false);
        let par = generate_dataset(&spec, &styles).unwrap();
        for (a, b) in seq.unlabeled.iter().zip(&par.unlabeled) {
            assert_eq!(a.image, b.image);
        }
    }
}
