//! Command-line front end: configure a transfer run, execute it, and emit
//! progress lines plus checkpoint images.
//!
//! Progress goes to stdout as one machine-parseable line per iteration:
//! `iter=<n> total=<f> style=<f> content=<f>`. Checkpoints are written as
//! `<output-stem>_iter<N>.png` every `--checkpoint-every` accepted steps.

use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use stylegram::container::ContainerError;
use stylegram::gradcheck::check_all_statistics;
use stylegram::imaging::{self, PixelMeta};
use stylegram::loss::{
    build_method_config, is_experimental_method, layer_weighting, style_target, total_loss_grad,
    LossBreakdown, LossError, MethodConfig, MethodOverrides, METHOD_NAMES,
};
use stylegram::network::NetworkError;
use stylegram::optimizer::{gd_run_with, lbfgs_run_with, OptState, OptimError};
use stylegram::statistics::{StatLayers, StatVariant};
use stylegram::tensor::ActivationVolume;

#[derive(Parser, Debug)]
#[command(
    name = "stylegram",
    about = "Gram-statistic style transfer over a VGG-19 trunk",
    after_help = "Examples:\n  \
        stylegram --content photo.jpg --style paint.jpg --weights vgg19.gramwt --out result.png\n  \
        stylegram --method chain-blurred --content c.png --style s.png --weights vgg19.gramwt\n  \
        stylegram --list-methods\n  \
        stylegram --gradcheck --seed 42 --json"
)]
struct Cli {
    /// Content image (PNG or JPEG).
    #[arg(long)]
    content: Option<PathBuf>,

    /// Style image (PNG or JPEG).
    #[arg(long)]
    style: Option<PathBuf>,

    /// Method preset name (see --list-methods).
    #[arg(long, default_value = "classic")]
    method: String,

    /// JSON method configuration file; overrides --method.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output image path.
    #[arg(long, default_value = "stylized.png")]
    out: PathBuf,

    /// Iteration count override (preset default: 270).
    #[arg(long)]
    iters: Option<usize>,

    /// Style weight override (preset default: 2e9).
    #[arg(long)]
    style_weight: Option<f64>,

    /// Activation shift override.
    #[arg(long, allow_hyphen_values = true)]
    shift: Option<f64>,

    /// Square working size in pixels; must be divisible by 16.
    #[arg(long, default_value_t = 512)]
    size: usize,

    /// Checkpoint image interval in iterations; 0 disables checkpoints.
    #[arg(long, default_value_t = 50)]
    checkpoint_every: usize,

    /// Weight container path.
    #[arg(long)]
    weights: Option<PathBuf>,

    /// Seed reserved for randomized initialization modes; the run itself
    /// always starts from the content image.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// List the method presets and exit.
    #[arg(long)]
    list_methods: bool,

    /// Run the statistic gradient check and exit (nonzero on failure).
    #[arg(long)]
    gradcheck: bool,

    /// Emit the gradient-check report as JSON.
    #[arg(long)]
    json: bool,
}

/// Everything one transfer run needs.
#[derive(Debug, Clone)]
struct RunRequest {
    content: PathBuf,
    style: PathBuf,
    method: String,
    config_file: Option<PathBuf>,
    out: PathBuf,
    iterations: Option<usize>,
    style_weight: Option<f64>,
    shift: Option<f64>,
    size: usize,
    checkpoint_every: usize,
    weights: PathBuf,
    #[allow(dead_code)]
    seed: u64,
}

#[derive(Debug)]
enum CliError {
    /// Exit code 2: the weight container is missing or unreadable.
    Weights {
        path: PathBuf,
        source: ContainerError,
    },
    Usage(String),
    Imaging(imaging::ImagingError),
    Loss(LossError),
    Optim(OptimError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Weights { path, source } => {
                write!(f, "weight container {}: {source}", path.display())
            }
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Imaging(e) => write!(f, "{e}"),
            CliError::Loss(e) => write!(f, "{e}"),
            CliError::Optim(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Weights { .. } => 2,
            _ => 1,
        }
    }
}

impl From<imaging::ImagingError> for CliError {
    fn from(e: imaging::ImagingError) -> Self {
        CliError::Imaging(e)
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        CliError::Loss(e)
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        CliError::Optim(e)
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        CliError::Loss(LossError::Network(e))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if cli.list_methods {
        print!("{}", method_table());
        return ExitCode::SUCCESS;
    }
    if cli.gradcheck {
        let report = check_all_statistics(cli.seed);
        if cli.json {
            println!("{}", report.to_json());
        } else {
            println!("{report}");
        }
        return if report.passed {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        };
    }

    let request = match build_request(&cli) {
        Ok(request) => request,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    match run(&request) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn build_request(cli: &Cli) -> Result<RunRequest, CliError> {
    let content = cli
        .content
        .clone()
        .ok_or_else(|| CliError::Usage("--content is required for a transfer run".into()))?;
    let style = cli
        .style
        .clone()
        .ok_or_else(|| CliError::Usage("--style is required for a transfer run".into()))?;
    let weights = cli
        .weights
        .clone()
        .ok_or_else(|| CliError::Usage("--weights is required for a transfer run".into()))?;
    if cli.size < 16 || !cli.size.is_multiple_of(16) {
        return Err(CliError::Usage(format!(
            "--size {} must be a multiple of 16",
            cli.size
        )));
    }
    if let Some(0) = cli.iters {
        return Err(CliError::Usage("--iters must be at least 1".into()));
    }
    Ok(RunRequest {
        content,
        style,
        method: cli.method.clone(),
        config_file: cli.config.clone(),
        out: cli.out.clone(),
        iterations: cli.iters,
        style_weight: cli.style_weight,
        shift: cli.shift,
        size: cli.size,
        checkpoint_every: cli.checkpoint_every,
        weights,
        seed: cli.seed,
    })
}

fn load_config(request: &RunRequest) -> Result<MethodConfig, CliError> {
    let config = match &request.config_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            let mut config = MethodConfig::from_json_str(&text)?;
            if let Some(iterations) = request.iterations {
                config.iterations = iterations;
            }
            if let Some(alpha) = request.style_weight {
                config.style_weight = alpha;
            }
            if let Some(shift) = request.shift {
                config.shift = shift;
            }
            config
        }
        None => {
            let overrides = MethodOverrides {
                iterations: request.iterations,
                style_weight: request.style_weight,
                shift: request.shift,
                blur_count: None,
                power: None,
            };
            build_method_config(&request.method, &overrides)?
        }
    };
    if config.iterations == 0 {
        return Err(CliError::Usage(
            "configured iterations must be at least 1".into(),
        ));
    }
    Ok(config)
}

fn run(request: &RunRequest) -> Result<(), CliError> {
    let (net, manifest) =
        stylegram::load_vgg19(&request.weights).map_err(|source| CliError::Weights {
            path: request.weights.clone(),
            source,
        })?;
    let meta = PixelMeta::from_manifest(&manifest)?;
    let config = load_config(request)?;
    // the weighting must be resolvable against the real layer table
    layer_weighting(&net, &config)?;

    let content_img = imaging::resize_bilinear(
        &imaging::load_image(&request.content)?,
        request.size,
        request.size,
    );
    let style_img = imaging::resize_bilinear(
        &imaging::load_image(&request.style)?,
        request.size,
        request.size,
    );
    let content_input = imaging::preprocess(&content_img, &meta);
    let style_input = imaging::preprocess(&style_img, &meta);

    let target_style = style_target(&net, &config, &style_input)?;
    let target_content = net.forward_record(&content_input)?;

    // per-evaluation breakdown log so the progress line can report the
    // accepted iterate's style/content split without re-evaluating
    let breakdowns: RefCell<Vec<LossBreakdown>> = RefCell::new(Vec::new());
    // a failed evaluation hands NaN to the optimizer, which aborts with the
    // iteration number; the underlying error is kept for the message
    let eval_failure: RefCell<Option<LossError>> = RefCell::new(None);
    let size = request.size;
    let objective = |x: &[f64]| -> (f64, Vec<f64>) {
        let evaluated = ActivationVolume::new(3, size, size, x.to_vec())
            .map_err(LossError::Tensor)
            .and_then(|image| {
                total_loss_grad(&net, &config, &image, &target_style, &target_content)
            });
        match evaluated {
            Ok((loss, grad)) => {
                let mut log = breakdowns.borrow_mut();
                if log.len() >= 64 {
                    log.remove(0);
                }
                log.push(loss);
                (loss.total, grad.into_data())
            }
            Err(e) => {
                eval_failure.borrow_mut().get_or_insert(e);
                (f64::NAN, vec![f64::NAN; x.len()])
            }
        }
    };

    let report_line = |iteration: usize, total: f64| {
        let log = breakdowns.borrow();
        let split = log.iter().rev().find(|b| b.total == total);
        let (style, content) = match split {
            Some(b) => (b.style, b.content),
            None => (f64::NAN, f64::NAN),
        };
        println!("iter={iteration} total={total} style={style} content={content}");
    };

    let checkpoint = |iteration: usize, x: &[f64]| {
        if request.checkpoint_every == 0 || !iteration.is_multiple_of(request.checkpoint_every) {
            return;
        }
        let volume = ActivationVolume::new(3, size, size, x.to_vec()).expect("finite iterate");
        let image = imaging::deprocess(&volume, &meta);
        let path = checkpoint_path(&request.out, iteration);
        if let Err(e) = imaging::save_png(&path, &image) {
            eprintln!("warning: checkpoint {}: {e}", path.display());
        }
    };

    // initial loss line before the first step
    let (initial, _) = objective(content_input.data());
    report_line(0, initial);

    let on_step = |iteration: usize, loss: f64, x: &[f64]| {
        report_line(iteration, loss);
        checkpoint(iteration, x);
    };

    let driven = if config.is_masked() {
        // masked gradients are inconsistent with the objective by design;
        // Wolfe conditions would reject them, so use plain descent scaled
        // to the initial gradient
        let (_, g0) = objective(content_input.data());
        let gnorm = g0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let step = if gnorm > 0.0 && gnorm.is_finite() {
            1.0 / gnorm
        } else {
            1.0
        };
        gd_run_with(
            objective,
            content_input.data(),
            config.iterations,
            step,
            on_step,
        )
    } else {
        lbfgs_run_with(
            objective,
            content_input.data(),
            config.iterations,
            10,
            on_step,
        )
    };
    let state: OptState = match driven {
        Ok(state) => state,
        Err(optim) => {
            return Err(match eval_failure.into_inner() {
                Some(loss_error) => CliError::Loss(loss_error),
                None => CliError::Optim(optim),
            })
        }
    };

    let volume =
        ActivationVolume::new(3, size, size, state.iterate).expect("final iterate is finite");
    imaging::save_png(&request.out, &imaging::deprocess(&volume, &meta))?;
    Ok(())
}

fn checkpoint_path(out: &Path, iteration: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let mut path = out.to_path_buf();
    path.set_file_name(format!("{stem}_iter{iteration}.png"));
    path
}

fn summarize_layers(config: &MethodConfig) -> String {
    let names: Vec<String> = config
        .style_terms
        .iter()
        .map(|t| match &t.layers {
            StatLayers::Single(l) => l.clone(),
            StatLayers::Pair(a, b) => format!("{a}-{b}"),
        })
        .collect();
    if names.len() > 6 {
        format!(
            "{}, ..., {} ({} terms)",
            names[0],
            names[names.len() - 1],
            names.len()
        )
    } else {
        names.join(", ")
    }
}

fn method_table() -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for name in METHOD_NAMES {
        let config =
            build_method_config(name, &MethodOverrides::default()).expect("preset names build");
        let blur = config.style_terms.iter().any(|t| t.blur_count > 0);
        let adjacent = config
            .style_terms
            .iter()
            .any(|t| t.variant == StatVariant::AdjacentInterLayer);
        let content = if config.content_layers.len() == 16 {
            "all convolutional".to_string()
        } else {
            config.content_layers.join(", ")
        };
        let tag = if is_experimental_method(name) {
            " [experimental]"
        } else {
            ""
        };
        writeln!(out, "{name}{tag}").unwrap();
        writeln!(out, "  content:   {content}").unwrap();
        writeln!(out, "  style:     {}", summarize_layers(&config)).unwrap();
        writeln!(
            out,
            "  weighting: {}  shift: {}  blur: {}  adjacent: {}",
            match config.weighting {
                stylegram::loss::WeightingKind::Uniform => "uniform",
                stylegram::loss::WeightingKind::Geometric => "geometric",
            },
            config.shift,
            if blur { "yes" } else { "no" },
            if adjacent { "yes" } else { "no" },
        )
        .unwrap();
        if let Some(rules) = &config.masking {
            let fractions: Vec<String> = rules
                .iter()
                .map(|r| format!("{}:{}", r.layer, r.keep_fraction))
                .collect();
            writeln!(out, "  masking:   {}", fractions.join(", ")).unwrap();
        }
    }
    out
}
