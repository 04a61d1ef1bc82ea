//! Batch evaluation: load a model and an image corpus, run attribution
//! methods, score every map, and write versioned CSV reports.

pub mod curves;
pub mod image;
pub mod report;
pub mod summary;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::attribution::{attribute, random_attribution, AttributionMap, Method, MethodConfig, PixelLayout};
use crate::error::{Error, Result};
use crate::network::{load_model, Model, ScoreMode};
use crate::ordering::{
    ablation_curve, aopc, construction_curve, default_chunk, full_ablation_curve, n_ord, s_ord, ModelScorer,
    OrderedPixels,
};
use crate::par::{self, Parallelism};
use crate::proportionality::{proportionality, DEFAULT_EPSILON};
use crate::tensor::Tensor;

pub use curves::{export_curves, import_shares, EvalCurves, ImportedShares};
pub use image::{list_images, load_image, write_pnm, write_raw_tensor};
pub use report::{read_metrics, sort_reports, MetricReport, Status};
pub use summary::{select_winners, summarize, AggregateSummary, Criterion, WinnerEntry};

/// Environment variable that overrides the output directory.
pub const OUTPUT_DIR_ENV: &str = "ATTRIB_EVAL_OUTPUT_DIR";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const WINNERS_FILE: &str = "winners.csv";
pub const CURVES_DIR: &str = "curves";

/// How the explained class is chosen for each image.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum ClassMode {
    /// The model's argmax prediction.
    #[default]
    Predicted,
    Fixed(usize),
    /// CSV with `image_id,label` rows.
    LabelFile(PathBuf),
}

/// Metric settings shared by every (image, method) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub score_mode: ScoreMode,
    pub baseline_value: f64,
    /// Prefix stride for perturbation and share curves; `None` picks one per map
    /// so curves have at most 257 points.
    pub chunk: Option<usize>,
    pub epsilon: f64,
    /// AOPC horizon; `None` means every pixel.
    pub aopc_steps: Option<usize>,
    /// Also compute Riemann estimates of TPN/TPS on this many cells.
    pub riemann_samples: Option<usize>,
    pub record_timing: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            score_mode: ScoreMode::Softmax,
            baseline_value: 0.0,
            chunk: None,
            epsilon: DEFAULT_EPSILON,
            aopc_steps: None,
            riemann_samples: None,
            record_timing: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model_path: PathBuf,
    /// A directory of image files, or a single file.
    pub image_source: PathBuf,
    pub methods: Vec<String>,
    pub class_mode: ClassMode,
    pub settings: EvalSettings,
    pub method_config: MethodConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub parallelism: Parallelism,
    pub export_curves: bool,
    pub export_svg: bool,
}

impl RunConfig {
    pub fn new(model_path: impl Into<PathBuf>, image_source: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            model_path: model_path.into(),
            image_source: image_source.into(),
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            class_mode: ClassMode::Predicted,
            settings: EvalSettings::default(),
            method_config: MethodConfig::default(),
            seed: 0,
            output_dir: output_dir.into(),
            parallelism: Parallelism::default(),
            export_curves: false,
            export_svg: false,
        }
    }

    pub fn validate(&self, provider: &dyn AttributionProvider) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        let mut seen = BTreeSet::new();
        for m in &self.methods {
            if !provider.supports(m) {
                return Err(Error::Config(format!("unknown method {m:?}")));
            }
            if !seen.insert(m) {
                return Err(Error::Config(format!("method {m:?} listed twice")));
            }
        }
        for (what, path) in [("model", &self.model_path), ("image source", &self.image_source)] {
            if !path.exists() {
                return Err(Error::Config(format!("{what} {} does not exist", path.display())));
            }
        }
        if let ClassMode::LabelFile(p) = &self.class_mode {
            if !p.is_file() {
                return Err(Error::Config(format!("label file {} does not exist", p.display())));
            }
        }
        let s = &self.settings;
        if !(s.epsilon > 0.0 && s.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", s.epsilon)));
        }
        if !s.baseline_value.is_finite() {
            return Err(Error::Config("baseline value must be finite".into()));
        }
        if s.chunk == Some(0) {
            return Err(Error::Config("chunk must be at least 1".into()));
        }
        self.method_config.validate()
    }
}

/// Produces the attribution map for a named method. The built-in provider
/// runs the library's methods; tests can inject fixed maps instead.
pub trait AttributionProvider: Sync {
    fn supports(&self, method: &str) -> bool;

    fn attribute(
        &self,
        method: &str,
        image_id: &str,
        model: &Model,
        x: &Tensor,
        class: usize,
        cfg: &MethodConfig,
    ) -> Result<AttributionMap>;
}

/// The library's attribution methods. Stochastic methods get a seed derived
/// from the run seed and the image id, so results do not depend on which
/// other images are in the corpus.
#[derive(Clone, Copy, Debug, Default)]
pub struct BuiltinMethods;

impl AttributionProvider for BuiltinMethods {
    fn supports(&self, method: &str) -> bool {
        method.parse::<Method>().is_ok()
    }

    fn attribute(
        &self,
        method: &str,
        image_id: &str,
        model: &Model,
        x: &Tensor,
        class: usize,
        cfg: &MethodConfig,
    ) -> Result<AttributionMap> {
        let method: Method = method.parse()?;
        let seed = derive_seed(cfg.rng_seed, image_id, method.name());
        if method == Method::Random {
            let mut map = random_attribution(x, seed)?;
            map.class_index = class;
            map.baseline_value = cfg.baseline_value;
            return Ok(map);
        }
        let cfg = MethodConfig { rng_seed: seed, ..cfg.clone() };
        attribute(method, model, x, class, &cfg)
    }
}

/// FNV-1a over the seed, image id and method name.
pub fn derive_seed(seed: u64, image_id: &str, method: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let bytes = seed.to_le_bytes().into_iter().chain(image_id.bytes()).chain([0]).chain(method.bytes());
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Scores one attribution map. Returns the report and, for ok rows, the curves.
pub fn evaluate_map(
    model: &Model,
    image_id: &str,
    x: &Tensor,
    class: usize,
    map: &AttributionMap,
    settings: &EvalSettings,
    mode: Parallelism,
) -> Result<(MetricReport, Option<EvalCurves>)> {
    let start = Instant::now();
    let scorer = ModelScorer::new(model, class, settings.score_mode)?;
    let b = settings.baseline_value;
    let y0 = model.class_score(x, class, settings.score_mode)?;
    let yb = model.class_score(&x.map(|_| b), class, settings.score_mode)?;
    let ordered = OrderedPixels::from_scores(map.scores.data())?;
    if PixelLayout::of(x.shape())?.pixels != ordered.pixel_count() {
        return Err(Error::Shape(format!(
            "attribution map has {} pixels, image has shape {:?}",
            ordered.pixel_count(),
            x.shape()
        )));
    }
    let m = ordered.positive_count();
    let mut report = MetricReport {
        image_id: image_id.to_string(),
        method: map.method.clone(),
        class_index: class,
        y0,
        yb,
        m,
        n_ord: None,
        s_ord: None,
        aopc: None,
        tpn: None,
        tps: None,
        r: None,
        r_prime: None,
        runtime_ms: None,
        status: Status::Ok,
    };
    if m == 0 {
        report.status = Status::EmptyPositiveSet;
        return Ok((report, None));
    }
    let chunk = settings.chunk.unwrap_or_else(|| default_chunk(m));
    let ablation = ablation_curve(&scorer, x, &ordered, b, chunk, mode)?;
    let construction = construction_curve(&scorer, x, &ordered, b, chunk, mode)?;
    report.n_ord = Some(n_ord(&ablation)?);
    report.s_ord = Some(s_ord(&construction)?);
    let steps = settings.aopc_steps.unwrap_or(ordered.pixel_count());
    let full = full_ablation_curve(&scorer, x, &ordered, b, steps, mode)?;
    report.aopc = Some(aopc(&full, steps)?);
    let curves = match proportionality(
        &scorer,
        x,
        &ordered,
        b,
        y0,
        yb,
        chunk,
        settings.epsilon,
        settings.riemann_samples,
        mode,
    ) {
        Ok((p, shares)) => {
            report.tpn = Some(p.tpn);
            report.tps = Some(p.tps);
            report.r = Some(p.r);
            report.r_prime = Some(p.r_prime);
            Some(EvalCurves {
                ablation,
                construction,
                shares,
                y0,
                yb,
                epsilon: settings.epsilon,
            })
        }
        Err(Error::DegenerateScore(_)) => {
            report.status = Status::DegenerateScore;
            None
        }
        Err(e) => return Err(e),
    };
    if settings.record_timing {
        report.runtime_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok((report, curves))
}

/// A report and, for ok rows, the curves behind it.
pub type EvaluatedRow = (MetricReport, Option<EvalCurves>);

/// An image that could be loaded, with its optional label.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedImage {
    pub id: String,
    pub image: Tensor,
}

/// A file or (image, method) pair that produced no row, and why.
#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub image_id: String,
    pub method: Option<String>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub reports: Vec<MetricReport>,
    pub summary: AggregateSummary,
    pub skipped: Vec<Skipped>,
    pub written: Vec<PathBuf>,
}

impl EvalOutcome {
    pub fn ok_rows(&self) -> usize {
        self.reports.iter().filter(|r| r.is_ok()).count()
    }
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<String, usize>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut labels = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if rec.len() < 2 {
            return Err(Error::Format(format!("{}: label rows need image_id,label", path.display())));
        }
        let label = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad label {:?}", path.display(), &rec[1])))?;
        labels.insert(rec[0].trim().to_string(), label);
    }
    Ok(labels)
}

enum ClassSource {
    Predicted,
    Fixed(usize),
    Labels(BTreeMap<String, usize>),
}

impl ClassSource {
    fn class_for(&self, model: &Model, img: &LoadedImage) -> Result<usize> {
        let class = match self {
            ClassSource::Predicted => model.forward(&img.image)?.predicted_class(),
            ClassSource::Fixed(c) => *c,
            ClassSource::Labels(map) => *map
                .get(&img.id)
                .ok_or_else(|| Error::Config(format!("no label for image {:?}", img.id)))?,
        };
        if class >= model.class_count() {
            return Err(Error::Range(format!("class {class} out of range")));
        }
        Ok(class)
    }
}

type ImageResult = (Vec<EvaluatedRow>, Vec<Skipped>);

fn evaluate_image(
    model: &Model,
    img: &LoadedImage,
    classes: &ClassSource,
    methods: &[String],
    provider: &dyn AttributionProvider,
    settings: &EvalSettings,
    method_cfg: &MethodConfig,
) -> ImageResult {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let class = match classes.class_for(model, img) {
        Ok(c) => c,
        Err(e) => {
            skipped.push(Skipped {
                image_id: img.id.clone(),
                method: None,
                reason: e.to_string(),
            });
            return (rows, skipped);
        }
    };
    for method in methods {
        let result = provider
            .attribute(method, &img.id, model, &img.image, class, method_cfg)
            .and_then(|mut map| {
                map.method = method.clone();
                evaluate_map(model, &img.id, &img.image, class, &map, settings, Parallelism::Sequential)
            });
        match result {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!("skipping {} / {method}: {e}", img.id);
                skipped.push(Skipped {
                    image_id: img.id.clone(),
                    method: Some(method.clone()),
                    reason: e.to_string(),
                });
            }
        }
    }
    (rows, skipped)
}

/// Evaluates every (image, method) pair, fanning out across images. Rows
/// come back sorted by image id, then method.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_corpus(
    model: &Model,
    images: &[LoadedImage],
    methods: &[String],
    class_mode: &ClassMode,
    provider: &dyn AttributionProvider,
    settings: &EvalSettings,
    method_cfg: &MethodConfig,
    mode: Parallelism,
) -> Result<(Vec<EvaluatedRow>, Vec<Skipped>)> {
    let classes = match class_mode {
        ClassMode::Predicted => ClassSource::Predicted,
        ClassMode::Fixed(c) => ClassSource::Fixed(*c),
        ClassMode::LabelFile(p) => ClassSource::Labels(read_labels(p)?),
    };
    let per_image = par::map(mode, images.len(), |i| {
        evaluate_image(model, &images[i], &classes, methods, provider, settings, method_cfg)
    });
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (r, s) in per_image {
        rows.extend(r);
        skipped.extend(s);
    }
    rows.sort_by(|a, b| a.0.image_id.cmp(&b.0.image_id).then_with(|| a.0.method.cmp(&b.0.method)));
    Ok((rows, skipped))
}

/// Loads every image under `source`; unreadable files are skipped with a reason.
pub fn load_corpus(source: &Path, expected_shape: &[usize]) -> Result<(Vec<LoadedImage>, Vec<Skipped>)> {
    let files = image::list_images(source)?;
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    let mut ids = BTreeSet::new();
    for path in files {
        let id = image::image_id(&path);
        if !ids.insert(id.clone()) {
            return Err(Error::Config(format!("two image files share the id {id:?}")));
        }
        match load_image(&path, Some(expected_shape)) {
            Ok(image) => images.push(LoadedImage { id, image }),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push(Skipped {
                    image_id: id,
                    method: None,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok((images, skipped))
}

/// [`run_eval_with`] using the built-in methods.
pub fn run_eval(config: &RunConfig) -> Result<EvalOutcome> {
    run_eval_with(config, &BuiltinMethods)
}

/// Runs the whole pipeline and writes `metrics.csv`, `summary.csv` and
/// `winners.csv` (plus curve files when requested) to the output directory.
pub fn run_eval_with(config: &RunConfig, provider: &dyn AttributionProvider) -> Result<EvalOutcome> {
    config.validate(provider)?;
    let model = load_model(&config.model_path)?;
    let (images, mut skipped) = load_corpus(&config.image_source, model.input_shape())?;
    if images.is_empty() {
        return Err(Error::EmptyInput(format!("no readable images in {}", config.image_source.display())));
    }
    let method_cfg = MethodConfig {
        rng_seed: config.seed,
        baseline_value: config.settings.baseline_value,
        score_mode: config.settings.score_mode,
        parallelism: Parallelism::Sequential,
        ..config.method_config.clone()
    };
    let (rows, more) = evaluate_corpus(
        &model,
        &images,
        &config.methods,
        &config.class_mode,
        provider,
        &config.settings,
        &method_cfg,
        config.parallelism,
    )?;
    skipped.extend(more);

    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    if config.export_curves {
        let dir = out.join(CURVES_DIR);
        for (r, c) in &rows {
            if let Some(c) = c {
                written.extend(export_curves(&dir, &r.image_id, &r.method, c, config.export_svg)?);
            }
        }
    }
    let reports: Vec<MetricReport> = rows.into_iter().map(|(r, _)| r).collect();
    let summary = summarize(&reports)?;
    let metrics_path = out.join(METRICS_FILE);
    report::write_text(&metrics_path, &report::metrics_csv(&reports)?)?;
    written.push(metrics_path);
    let summary_path = out.join(SUMMARY_FILE);
    report::write_text(&summary_path, &summary::summary_csv(&summary)?)?;
    written.push(summary_path);
    if reports.iter().any(|r| r.is_ok()) {
        let winners_path = out.join(WINNERS_FILE);
        report::write_text(&winners_path, &summary::winners_csv(&select_winners(&reports, false)?)?)?;
        written.push(winners_path);
    }
    Ok(EvalOutcome {
        reports,
        summary,
        skipped,
        written,
    })
}
