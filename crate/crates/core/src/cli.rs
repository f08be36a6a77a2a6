//! Command-line front end. Every subcommand validates its whole configuration
//! before enumerating anything.
//!
//! Exit codes: 0 success, 1 a verified assertion failed, 2 usage or
//! configuration error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::charsum::{hyper_freq, k_gl, k_sl, s_freq_in, FreqVector};
use crate::discrepancy::HVector;
use crate::embed::{classical_f_n, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::experiments::{
    classical_baseline, etk_scan, half_square_region, sl2_counterexample, sl2_default_h,
    sl2_phase_sum, theorem_scan, verify_lemma_bounds, BaselineParams, EtkParams,
    ExperimentReport, Lemma, RunOptions, TheoremParams, Trend, SCHEMA_VERSION,
};
use crate::fp_linalg::{FpMatrix, MatrixFile, Prime, Residue};
use crate::group_enum::{order, Domain, GroupKind};
use crate::region::{count_image, Region, RegionFile, RegionUnion};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "matequi",
    version,
    about = "Exact character sums and equidistribution checks for matrix groups over F_p"
)]
pub struct Cli {
    /// Worker threads for enumeration scans.
    #[arg(long, global = true, env = "MATEQUI_THREADS")]
    pub threads: Option<usize>,
    /// Permit enumerations beyond the desk-scale limit.
    #[arg(long, global = true)]
    pub allow_large: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Group order from the closed-form product.
    Order(GroupArgs),
    /// Count members by streaming enumeration.
    Enumerate(GroupArgs),
    /// Embed one matrix (or one unit mod m) as a point of the unit cube.
    Embed(EmbedArgs),
    /// Count image points inside a region file.
    Count(CountArgs),
    /// Exact character-sum histograms.
    #[command(subcommand)]
    Charsum(CharsumCommand),
    /// ETK bound against the exact errors of a box family.
    Etk(EtkArgs),
    /// Verification suites.
    #[command(subcommand)]
    Verify(VerifyCommand),
}

#[derive(Debug, Args)]
pub struct GroupArgs {
    /// m, gl, sl or z.
    #[arg(long)]
    pub group: GroupKind,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: u64,
    /// Emit JSON instead of the bare number.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// g, h, s or gt.
    #[arg(long, required_unless_present = "modulus")]
    pub embedding: Option<Embedding>,
    /// Matrix file `{"n":..,"p":..,"entries":[[..]]}`.
    #[arg(long, required_unless_present = "modulus")]
    pub matrix: Option<PathBuf>,
    /// Auxiliary matrix C for `gt`.
    #[arg(long)]
    pub aux: Option<PathBuf>,
    /// Classical map x -> ({x/m}, {x^{-1}/m}); needs --x.
    #[arg(long, requires = "x", conflicts_with_all = ["embedding", "matrix"])]
    pub modulus: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<i64>,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[arg(long)]
    pub embedding: Embedding,
    /// Defaults to the embedding's natural group.
    #[arg(long)]
    pub group: Option<GroupKind>,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: u64,
    #[arg(long)]
    pub region: PathBuf,
    #[arg(long)]
    pub aux: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CharsumCommand {
    /// S(group, U).
    S {
        #[arg(long)]
        group: GroupKind,
        #[arg(long)]
        u: PathBuf,
        #[command(flatten)]
        norm: Normalization,
    },
    /// K(GL_n, U, V, M); M defaults to the identity.
    Kgl {
        #[arg(long)]
        u: PathBuf,
        #[arg(long)]
        v: PathBuf,
        #[arg(long)]
        m: Option<PathBuf>,
        #[command(flatten)]
        norm: Normalization,
    },
    /// K(SL_n, U, V).
    Ksl {
        #[arg(long)]
        u: PathBuf,
        #[arg(long)]
        v: PathBuf,
        #[command(flatten)]
        norm: Normalization,
    },
    /// Hyper-Kloosterman sum with coefficients a_1..a_n.
    Hyper {
        #[arg(long)]
        p: u64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        a: Vec<i64>,
        #[command(flatten)]
        norm: Normalization,
    },
}

#[derive(Debug, Args)]
pub struct Normalization {
    /// Report |sum| / p^e.
    #[arg(long, allow_hyphen_values = true)]
    pub exponent: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Also write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write the two-column plot data here.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EtkArgs {
    #[arg(long)]
    pub embedding: Embedding,
    #[arg(long)]
    pub group: Option<GroupKind>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, required_unless_present = "p_list", conflicts_with = "p_list")]
    pub p: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub p_list: Option<Vec<u64>>,
    /// Frequency cutoff; defaults to floor(p^(1/(2(2n^2+1)))).
    #[arg(long = "H")]
    pub h_max: Option<u64>,
    /// Box family as a region-style file (boxes may overlap).
    #[arg(long)]
    pub boxes: Option<PathBuf>,
    /// Size of the preset family used without --boxes.
    #[arg(long, default_value_t = 50)]
    pub box_count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub aux: Option<PathBuf>,
    /// Cap on the number of nonzero frequency vectors.
    #[arg(long)]
    pub max_vectors: Option<u64>,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Subcommand)]
pub enum VerifyCommand {
    /// Exact error decay of image counts, with ETK domination.
    Theorem {
        #[arg(long)]
        embedding: Embedding,
        #[arg(long)]
        group: Option<GroupKind>,
        #[arg(long)]
        n: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        p_list: Vec<u64>,
        /// Region file; defaults to [0,1/2)^2 x [0,1)^(k-2).
        #[arg(long)]
        region: Option<PathBuf>,
        /// Integer template for C, reduced mod each p.
        #[arg(long)]
        aux: Option<PathBuf>,
        #[arg(long = "H")]
        h_max: Option<u64>,
        /// none, non-increasing or strict.
        #[arg(long, default_value = "non-increasing")]
        trend: Trend,
        #[command(flatten)]
        out: Output,
    },
    /// The classical ({x/m}, {x^{-1}/m}) baseline.
    Baseline {
        #[arg(long, value_delimiter = ',', required = true)]
        moduli: Vec<u64>,
        #[arg(long)]
        region: Option<PathBuf>,
        #[arg(long = "H", default_value_t = 1)]
        h_max: u64,
        #[arg(long, default_value = "none")]
        trend: Trend,
        #[command(flatten)]
        out: Output,
    },
    /// The SL_2 frequency whose phases are all 1.
    Sl2 {
        #[arg(long)]
        p: u64,
        /// Eight comma-separated integers; defaults to 1,0,0,0,0,0,0,-1.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        h: Option<Vec<i64>>,
        #[command(flatten)]
        out: Output,
    },
    /// Normalized growth of the sums bounded by one lemma.
    Lemma {
        /// L1, L2, L3, L4, S4 or R2.
        #[arg(long)]
        lemma: Lemma,
        #[arg(long)]
        n: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        p_list: Vec<u64>,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: Output,
    },
}

/// Parses `argv` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(argv: I, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            if code == EXIT_OK {
                let _ = write!(stdout, "{e}");
            } else {
                let _ = write!(stderr, "{e}");
            }
            return code;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            let _ = writeln!(stderr, "error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: cannot start worker pool: {e}");
            return EXIT_USAGE;
        }
    };
    let opts = RunOptions {
        allow_large: cli.allow_large,
        ..RunOptions::default()
    };
    match pool.install(|| dispatch(&cli.command, &opts, stdout, stderr)) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn emit<T: Serialize>(stdout: &mut (dyn Write + Send), value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    writeln!(stdout, "{text}").map_err(|e| Error::Io {
        path: "<stdout>".into(),
        source: e,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })
}

fn load_matrix(path: &Path) -> Result<FpMatrix> {
    read_json::<MatrixFile>(path)?.try_into()
}

/// Matrix file read as an integer template; its `p` is ignored.
fn load_template(path: &Path) -> Result<Vec<Vec<i64>>> {
    let f: MatrixFile = read_json(path)?;
    if f.entries.len() != f.n || f.entries.iter().any(|r| r.len() != f.n) {
        return Err(Error::InvalidInput(format!(
            "{}: entries must be an {}x{} array",
            path.display(),
            f.n,
            f.n
        )));
    }
    Ok(f.entries)
}

fn load_aux(path: Option<&PathBuf>, n: usize, p: Prime) -> Result<Option<FpMatrix>> {
    match path {
        None => Ok(None),
        Some(path) => {
            let c = load_matrix(path)?;
            if c.modulus() != p {
                return Err(Error::ModulusMismatch {
                    left: p.get(),
                    right: c.modulus().get(),
                });
            }
            if c.n() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: c.n(),
                });
            }
            Ok(Some(c))
        }
    }
}

fn finish_report(
    report: &ExperimentReport,
    out: &Output,
    stdout: &mut (dyn Write + Send),
    stderr: &mut (dyn Write + Send),
) -> Result<i32> {
    let text = report.to_json();
    if let Some(path) = &out.report {
        write_file(path, &format!("{text}\n"))?;
    }
    if let Some(path) = &out.plot_data {
        let plot = report.plot.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!("report '{}' has no plot data", report.name))
        })?;
        write_file(path, &plot.to_text())?;
    }
    writeln!(stdout, "{text}").map_err(|e| Error::Io {
        path: "<stdout>".into(),
        source: e,
    })?;
    if report.passed() {
        Ok(EXIT_OK)
    } else {
        for v in report.failures() {
            let _ = writeln!(stderr, "FAILED {}: {}", v.name, v.detail);
        }
        Ok(EXIT_ASSERTION)
    }
}

fn charsum_output(
    stdout: &mut (dyn Write + Send),
    sum: &str,
    freq: &FreqVector,
    norm: &Normalization,
) -> Result<i32> {
    let c = freq.to_complex();
    let p = freq.modulus() as f64;
    emit(
        stdout,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "sum": sum,
            "p": freq.modulus(),
            "counts": freq.counts(),
            "complex": c,
            "abs": c.abs(),
            "normalized_by": norm.exponent.map(|e| format!("p^{e}")),
            "ratio": norm.exponent.map(|e| c.abs() / p.powf(e)),
        }),
    )?;
    Ok(EXIT_OK)
}

fn dispatch(
    cmd: &Command,
    opts: &RunOptions,
    stdout: &mut (dyn Write + Send),
    stderr: &mut (dyn Write + Send),
) -> Result<i32> {
    match cmd {
        Command::Order(a) => {
            let value = order(a.group, a.n, Prime::new(a.p)?)?;
            if a.json {
                emit(
                    stdout,
                    &json!({"schema_version": SCHEMA_VERSION, "group": a.group,
                            "n": a.n, "p": a.p, "order": value}),
                )?;
            } else {
                let _ = writeln!(stdout, "{value}");
            }
            Ok(EXIT_OK)
        }
        Command::Enumerate(a) => {
            let d = Domain::with_override(a.group, a.n, Prime::new(a.p)?, opts.allow_large)?;
            let count = d.count_members();
            if a.json {
                emit(
                    stdout,
                    &json!({"schema_version": SCHEMA_VERSION, "group": a.group,
                            "n": a.n, "p": a.p, "count": count}),
                )?;
            } else {
                let _ = writeln!(stdout, "{count}");
            }
            Ok(EXIT_OK)
        }
        Command::Embed(a) => {
            let point = match (a.modulus, a.x) {
                (Some(m), Some(x)) => classical_f_n(x, m)?,
                _ => {
                    let emb = a.embedding.expect("clap requires --embedding");
                    let m = load_matrix(a.matrix.as_ref().expect("clap requires --matrix"))?;
                    let aux = load_aux(a.aux.as_ref(), m.n(), m.modulus())?;
                    let kind = emb.default_kind();
                    let embedder = Embedder::new(emb, kind, m.n(), aux.as_ref())?;
                    if !kind.contains(&m) {
                        return Err(Error::MembershipViolation(format!(
                            "matrix is not in {kind} as required by embedding '{emb}'"
                        )));
                    }
                    embedder.point(&m)
                }
            };
            emit(
                stdout,
                &json!({"schema_version": SCHEMA_VERSION, "point": point,
                        "coordinates": (0..point.k()).map(|i| point.coord(i)).collect::<Vec<_>>()}),
            )?;
            Ok(EXIT_OK)
        }
        Command::Count(a) => {
            let kind = a.group.unwrap_or(a.embedding.default_kind());
            let region = RegionUnion::load(&a.region)?;
            let p = Prime::new(a.p)?;
            let aux = load_aux(a.aux.as_ref(), a.n, p)?;
            let d = Domain::with_override(kind, a.n, p, opts.allow_large)?;
            let count = count_image(&d, a.embedding, &region, aux.as_ref())?;
            let area = region.area();
            let frac = num_rational::BigRational::new(count.into(), d.order().into());
            let err = num_traits::Signed::abs(&(frac - &area));
            emit(
                stdout,
                &json!({
                    "schema_version": SCHEMA_VERSION,
                    "embedding": a.embedding, "group": kind, "n": a.n, "p": a.p,
                    "count": count, "n_points": d.order(),
                    "area": crate::discrepancy::ratio_string(&area),
                    "error": crate::discrepancy::ratio_string(&err),
                    "error_value": crate::discrepancy::ratio_f64(&err),
                }),
            )?;
            Ok(EXIT_OK)
        }
        Command::Charsum(c) => match c {
            CharsumCommand::S { group, u, norm } => {
                let u = load_matrix(u)?;
                let d = Domain::with_override(*group, u.n(), u.modulus(), opts.allow_large)?;
                charsum_output(stdout, &format!("S({group}, U)"), &s_freq_in(&d, &u)?, norm)
            }
            CharsumCommand::Kgl { u, v, m, norm } => {
                let u = load_matrix(u)?;
                let v = load_matrix(v)?;
                let m = match m {
                    Some(path) => load_matrix(path)?,
                    None => FpMatrix::identity(u.n(), u.modulus())?,
                };
                charsum_output(stdout, "K(GL, U, V, M)", &k_gl(&u, &v, &m)?, norm)
            }
            CharsumCommand::Ksl { u, v, norm } => {
                let u = load_matrix(u)?;
                let v = load_matrix(v)?;
                charsum_output(stdout, "K(SL, U, V)", &k_sl(&u, &v)?, norm)
            }
            CharsumCommand::Hyper { p, a, norm } => {
                let p = Prime::new(*p)?;
                let coeffs: Vec<Residue> = a.iter().map(|&x| Residue::from_prime(x, p)).collect();
                charsum_output(stdout, "Kl_n(a)", &hyper_freq(&coeffs)?, norm)
            }
        },
        Command::Etk(a) => {
            let kind = a.group.unwrap_or(a.embedding.default_kind());
            a.embedding.check_kind(kind)?;
            let p_list = match (&a.p_list, a.p) {
                (Some(list), _) => list.clone(),
                (None, Some(p)) => vec![p],
                (None, None) => unreachable!("clap requires --p or --p-list"),
            };
            let boxes = match &a.boxes {
                Some(path) => {
                    let f: RegionFile = read_json(path)?;
                    let k = a.embedding.dim(a.n);
                    if f.k != k {
                        return Err(Error::DimensionMismatch {
                            expected: k,
                            found: f.k,
                        });
                    }
                    Some(f.boxes)
                }
                None => None,
            };
            let aux = a.aux.as_deref().map(load_template).transpose()?;
            let mut run_opts = *opts;
            if let Some(cap) = a.max_vectors {
                run_opts.etk.max_vectors = cap;
            }
            let params = EtkParams {
                embedding: a.embedding,
                kind,
                n: a.n,
                p_list,
                aux,
                h_max: a.h_max,
                boxes,
                box_count: a.box_count,
                box_seed: a.seed,
            };
            finish_report(&etk_scan(&params, &run_opts)?, &a.out, stdout, stderr)
        }
        Command::Verify(v) => verify(v, opts, stdout, stderr),
    }
}

fn region_or_default(path: Option<&PathBuf>, k: usize) -> Result<RegionFile> {
    Ok(match path {
        Some(path) => RegionUnion::load(path)?.to_file(),
        None => half_square_region(k).to_file(),
    })
}

fn verify(
    cmd: &VerifyCommand,
    opts: &RunOptions,
    stdout: &mut (dyn Write + Send),
    stderr: &mut (dyn Write + Send),
) -> Result<i32> {
    match cmd {
        VerifyCommand::Theorem {
            embedding,
            group,
            n,
            p_list,
            region,
            aux,
            h_max,
            trend,
            out,
        } => {
            let kind = group.unwrap_or(embedding.default_kind());
            embedding.check_kind(kind)?;
            let params = TheoremParams {
                embedding: *embedding,
                kind,
                n: *n,
                p_list: p_list.clone(),
                region: region_or_default(region.as_ref(), embedding.dim(*n))?,
                aux: aux.as_deref().map(load_template).transpose()?,
                h_max: *h_max,
                trend: *trend,
            };
            finish_report(&theorem_scan(&params, opts)?, out, stdout, stderr)
        }
        VerifyCommand::Baseline {
            moduli,
            region,
            h_max,
            trend,
            out,
        } => {
            let params = BaselineParams {
                moduli: moduli.clone(),
                region: region_or_default(region.as_ref(), 2)?,
                h_max: *h_max,
                trend: *trend,
            };
            finish_report(&classical_baseline(&params, opts)?, out, stdout, stderr)
        }
        VerifyCommand::Sl2 { p, h, out } => {
            let h = h.clone().map(HVector).unwrap_or_else(sl2_default_h);
            match sl2_counterexample(*p, &h, opts) {
                Err(Error::ConditionViolated(why)) => {
                    // Not the identity case: show the genuine sum, then fail the config.
                    let report = sl2_phase_sum(*p, &h, opts)?;
                    let _ = writeln!(stdout, "{}", report.to_json());
                    Err(Error::ConditionViolated(why))
                }
                other => finish_report(&other?, out, stdout, stderr),
            }
        }
        VerifyCommand::Lemma {
            lemma,
            n,
            p_list,
            samples,
            seed,
            out,
        } => finish_report(
            &verify_lemma_bounds(*lemma, *n, p_list, *samples, *seed, opts)?,
            out,
            stdout,
            stderr,
        ),
    }
}
