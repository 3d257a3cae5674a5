//! The `diffdepth` command-line tool.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::diffusion::{assemble, SmoothnessField, SolverConfig};
use crate::error::{Error, Result};
use crate::filter::{weighted_median, DEFAULT_COLOR_SIGMA};
use crate::grid::Grid;
use crate::loss::{metrics, scale_fit, LossConfig, PhotometricLoss, DEFAULT_BP_THRESHOLDS};
use crate::optim::{augment_points, forward, run, write_trace, Objective, ParamState, PipelineConfig, Schedule};
use crate::scene_io::camera::downsample_coord;
use crate::scene_io::manifest::{save_image, write_manifest};
use crate::scene_io::pfm::write_preview_png;
use crate::scene_io::points::RecordKind;
use crate::scene_io::{
    downsample_grid, load_multiview, load_points, read_pfm, write_metrics, write_pfm, write_points,
    LoadOptions, MultiViewSet, PointSet, ScenePoint,
};
use crate::splat::{render, SplatConfig};
use crate::synthetic::{generate, SceneKind, SyntheticConfig};

/// Input and output locations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub points: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    /// Depth map to score (`eval`).
    pub depth: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    /// Fit a global scale to the reference before scoring.
    pub scale_fit: bool,
    pub fit_samples: usize,
    pub fit_repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: DEFAULT_BP_THRESHOLDS.to_vec(),
            scale_fit: false,
            fit_samples: 1000,
            fit_repeats: 10,
        }
    }
}

/// Everything a run depends on. Dumped next to optimisation results so the
/// run can be repeated with `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub supervised: bool,
    pub median_filter: bool,
    pub downsample: usize,
    pub linearize: bool,
    /// Add points on strong image edges before optimising, at this
    /// gradient-magnitude quantile.
    pub augment_quantile: Option<f64>,
    pub paths: Paths,
    pub splat: SplatConfig,
    pub solver: SolverConfig,
    pub schedule: Schedule,
    pub loss: LossConfig,
    pub eval: EvalConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            threads: 0,
            supervised: false,
            median_filter: false,
            downsample: 1,
            linearize: false,
            augment_quantile: None,
            paths: Paths::default(),
            splat: SplatConfig::default(),
            solver: SolverConfig::default(),
            schedule: Schedule::default(),
            loss: LossConfig::default(),
            eval: EvalConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.splat.validate()?;
        self.solver.validate()?;
        self.schedule.validate()?;
        self.loss.validate()?;
        if self.downsample == 0 {
            return Err(Error::Config("downsample must be >= 1".into()));
        }
        if let Some(q) = self.augment_quantile {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Config(format!("augment_quantile must be in [0, 1], got {q}")));
            }
        }
        if self.eval.thresholds.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config("bad-pixel thresholds must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            splat: self.splat,
            solver: self.solver,
        }
    }

    fn load_options(&self) -> LoadOptions {
        LoadOptions {
            downsample: self.downsample,
            linearize: self.linearize,
        }
    }

    fn require<'a>(&self, p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::Config(format!("--{flag} is required")))
    }
}

#[derive(Debug, Parser)]
#[command(name = "diffdepth", version, about = "Dense depth from sparse points via differentiable diffusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Splat points into label (S.pfm) and weight (lambda.pfm) images.
    Render(CommonArgs),
    /// Diffuse points into a dense depth map.
    Diffuse(CommonArgs),
    /// Optimise points and smoothness against the multi-view loss.
    Optimize(CommonArgs),
    /// Score a depth map against a reference.
    Eval(EvalArgs),
    /// Write a synthetic light-field scene with exact ground truth.
    MakeSynthetic(SyntheticArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Scene manifest listing views and cameras.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Sparse point file.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Reference depth (PFM).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (1 gives bit-reproducible output; 0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Optimise against --gt instead of the photometric loss.
    #[arg(long)]
    pub supervised: bool,
    /// Apply a 3×3 weighted median to the final depth.
    #[arg(long)]
    pub median_filter: bool,
    /// Box-downsample input images by this factor.
    #[arg(long)]
    pub downsample: Option<usize>,
    /// Decode 8-bit images from sRGB to linear.
    #[arg(long)]
    pub linearize: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Depth map to score (PFM).
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Fit a global scale between depth and reference first.
    #[arg(long)]
    pub scale_fit: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SyntheticArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// fronto-parallel, textured-plane or two-plane.
    #[arg(long)]
    pub kind: Option<SceneKind>,
}

impl CommonArgs {
    /// The configuration file (or defaults) with flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let p = &mut cfg.paths;
        for (dst, src) in [
            (&mut p.manifest, &self.manifest),
            (&mut p.points, &self.points),
            (&mut p.gt, &self.gt),
            (&mut p.out, &self.out),
        ] {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(d) = self.downsample {
            cfg.downsample = d;
        }
        cfg.supervised |= self.supervised;
        cfg.median_filter |= self.median_filter;
        cfg.linearize |= self.linearize;
        Ok(cfg)
    }
}

impl Command {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match self {
            Command::Render(a) | Command::Diffuse(a) | Command::Optimize(a) => a.resolve()?,
            Command::Eval(a) => {
                let mut cfg = a.common.resolve()?;
                if a.depth.is_some() {
                    cfg.paths.depth.clone_from(&a.depth);
                }
                cfg.eval.scale_fit |= a.scale_fit;
                cfg
            }
            Command::MakeSynthetic(a) => {
                let mut cfg = a.common.resolve()?;
                if let Some(k) = a.kind {
                    cfg.synthetic.kind = k;
                }
                cfg
            }
        };
        if let Command::MakeSynthetic(a) = self {
            if a.common.seed.is_some() || a.common.config.is_none() {
                cfg.synthetic.seed = cfg.seed;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses the process arguments, runs the command and returns the exit
/// code. Errors are reported on stderr.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("diffdepth: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command. Inputs are read and the result computed before the
/// output directory is created, so a failing run leaves nothing behind.
pub fn execute(cmd: &Command) -> Result<()> {
    let cfg = cmd.config()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cmd {
        Command::Render(_) => cmd_render(&cfg),
        Command::Diffuse(_) => cmd_diffuse(&cfg),
        Command::Optimize(_) => cmd_optimize(&cfg),
        Command::Eval(_) => cmd_eval(&cfg),
        Command::MakeSynthetic(_) => cmd_make_synthetic(&cfg),
    })
}

struct Inputs {
    views: MultiViewSet,
    points: Vec<ScenePoint>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let manifest = cfg.require(&cfg.paths.manifest, "manifest")?;
    let points_path = cfg.require(&cfg.paths.points, "points")?;
    let out = cfg.require(&cfg.paths.out, "out")?;
    if out.is_file() {
        return Err(Error::Config(format!("{} is a file, expected a directory", out.display())));
    }
    let views = load_multiview(manifest, cfg.load_options())?;
    let loaded = load_points(points_path, Some(&views.central().camera))?;
    for r in &loaded.rejected {
        log::warn!("{}: record {} skipped: {}", points_path.display(), r.index, r.reason);
    }
    let mut points = loaded.points.as_slice().to_vec();
    // World records were projected through the already rescaled camera.
    if loaded.kind == RecordKind::Screen && cfg.downsample > 1 {
        for p in &mut points {
            p.x = downsample_coord(p.x, cfg.downsample);
            p.y = downsample_coord(p.y, cfg.downsample);
        }
    }
    Ok(Inputs { views, points })
}

fn load_reference(path: &Path, cfg: &RunConfig, width: usize, height: usize) -> Result<Grid> {
    let mut gt = read_pfm(path)?;
    if cfg.downsample > 1 && (gt.width(), gt.height()) != (width, height) {
        gt = downsample_grid(&gt, cfg.downsample);
    }
    if (gt.width(), gt.height()) != (width, height) {
        return Err(Error::DimensionMismatch(format!(
            "{} is {}x{}, views are {width}x{height}",
            path.display(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(gt)
}

fn output_dir(cfg: &RunConfig) -> Result<&Path> {
    let out = cfg.require(&cfg.paths.out, "out")?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(out)
}

fn initial_state(inp: &Inputs) -> ParamState {
    ParamState::new(inp.points.clone(), SmoothnessField::from_image(&inp.views.central().image))
}

fn cmd_render(cfg: &RunConfig) -> Result<()> {
    let inp = load_inputs(cfg)?;
    let images = render(&inp.points, inp.views.width(), inp.views.height(), &cfg.splat)?;
    let (labels, weights) = images.into_grids();
    let out = output_dir(cfg)?;
    write_pfm(&labels, &out.join("S.pfm"))?;
    write_pfm(&weights, &out.join("lambda.pfm"))
}

fn finish_depth(cfg: &RunConfig, depth: Grid, views: &MultiViewSet) -> Result<Grid> {
    let bad = depth.count_non_finite();
    if bad > 0 {
        return Err(Error::NonFinite { count: bad });
    }
    if cfg.median_filter {
        weighted_median(&depth, &views.central().image, DEFAULT_COLOR_SIGMA)
    } else {
        Ok(depth)
    }
}

fn write_depth_files(out: &Path, depth: &Grid) -> Result<()> {
    write_pfm(depth, &out.join("depth.pfm"))?;
    write_preview_png(depth, &out.join("preview.png"))
}

fn cmd_diffuse(cfg: &RunConfig) -> Result<()> {
    let inp = load_inputs(cfg)?;
    let state = initial_state(&inp);
    let images = render(&state.points, state.width(), state.height(), &cfg.splat)?;
    let depth = assemble(&images, &state.smooth)?.solve(&cfg.solver)?.into_grid();
    let depth = finish_depth(cfg, depth, &inp.views)?;
    let out = output_dir(cfg)?;
    write_depth_files(out, &depth)
}

fn cmd_optimize(cfg: &RunConfig) -> Result<()> {
    let inp = load_inputs(cfg)?;
    let (w, h) = (inp.views.width(), inp.views.height());
    let gt = match &cfg.paths.gt {
        Some(p) => Some(load_reference(p, cfg, w, h)?),
        None if cfg.supervised => return Err(Error::Config("--supervised needs --gt".into())),
        None => None,
    };
    let mut state = initial_state(&inp);
    let pipeline = cfg.pipeline();
    if let Some(q) = cfg.augment_quantile {
        let prelim = forward(&state, &pipeline)?;
        let n = augment_points(&mut state, &prelim, &inp.views.central().image, q)?;
        log::info!("added {n} edge points");
    }
    let loss;
    let objective = if cfg.supervised {
        Objective::Supervised(gt.as_ref().expect("checked above"))
    } else {
        loss = PhotometricLoss::new(&inp.views, cfg.loss)?;
        Objective::Photometric(&loss)
    };
    let result = run(state, &objective, &cfg.schedule, &pipeline)?;
    let depth = finish_depth(cfg, result.depth.into_grid(), &inp.views)?;
    let scores = match &gt {
        Some(g) => Some(metrics(&depth, g, &cfg.eval.thresholds)?),
        None => None,
    };
    let dump = cfg.to_toml()?;

    let out = output_dir(cfg)?;
    write_depth_files(out, &depth)?;
    write_trace(&out.join("trace.csv"), &result.trace)?;
    write_points(&PointSet::new(result.state.points), &out.join("final_points.csv"))?;
    let cfg_path = out.join("config.toml");
    fs::write(&cfg_path, dump).map_err(|e| Error::io(&cfg_path, e))?;
    if let Some(m) = scores {
        write_metrics(&out.join("metrics.txt"), &m.entries())?;
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let depth_path = cfg.require(&cfg.paths.depth, "depth")?;
    let gt_path = cfg.require(&cfg.paths.gt, "gt")?;
    cfg.require(&cfg.paths.out, "out")?;
    let mut depth = read_pfm(depth_path)?;
    let gt = read_pfm(gt_path)?;
    if !depth.same_shape(&gt) {
        return Err(Error::DimensionMismatch(format!(
            "depth is {}x{}, reference is {}x{}",
            depth.width(),
            depth.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut entries = Vec::new();
    if cfg.eval.scale_fit {
        let (fitted, s) = scale_fit(&depth, &gt, cfg.eval.fit_samples, cfg.eval.fit_repeats, cfg.seed)?;
        depth = fitted;
        entries.push(("scale".to_string(), s));
    }
    let m = metrics(&depth, &gt, &cfg.eval.thresholds)?;
    entries.extend(m.entries());
    let out = output_dir(cfg)?;
    write_metrics(&out.join("metrics.txt"), &entries)
}

fn cmd_make_synthetic(cfg: &RunConfig) -> Result<()> {
    cfg.require(&cfg.paths.out, "out")?;
    let scene = generate(&cfg.synthetic)?;
    let out = output_dir(cfg)?;
    let mut entries = Vec::with_capacity(scene.views.len());
    for v in scene.views.views() {
        let file = format!("{}.png", v.name);
        save_image(&v.image, &out.join(&file))?;
        entries.push((file, v.camera));
    }
    write_manifest(&out.join("manifest.txt"), scene.views.central_index(), &entries)?;
    write_pfm(&scene.gt, &out.join("gt.pfm"))?;
    write_points(&PointSet::new(scene.points), &out.join("points.csv"))
}
