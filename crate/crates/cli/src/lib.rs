//! Command-line surface of the decoding engine.
//!
//! Exit codes: 0 on success, 1 on a usage or configuration error, 2 when an
//! input file or the decoding itself fails.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use flsync_core::config::{parse_weights, RunConfig};
use flsync_core::flsync::flsync_decode;
use flsync_core::fsync::fsync_decode;
use flsync_core::fusion::DecodedHypothesis;
use flsync_core::io::{load_emission, parse_corpus, parse_ngram, save_emission, write_ngram, EmissionFile};
use flsync_core::lsync::lsync_decode;
use flsync_core::oracle::{
    adversarial_suite, compare_strategies, exhaustive_ranking, generate_lattice, random_suite, sequence_count,
    AdversarialPrefix, CompareConfig, PruneReport, Strategy, SuiteSummary, SyntheticSpec, ENUMERATION_LIMIT,
};
use flsync_core::scorers::{LabelScorer, NGramModel, Scorers, SurrogateAttDec};
use flsync_core::trace::DecodeTrace;
use flsync_core::{EmissionMatrix, Error, Label, Vocabulary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn at(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    }
}

#[derive(Parser, Debug)]
#[command(name = "flsync", version, about = "Frame/label-synchronous beam search over CTC posterior lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decode one lattice and print the best hypotheses.
    Decode(DecodeArgs),
    /// Run every strategy and the exhaustive reference over a directory of
    /// `<name>.emit` lattices with `<name>.truth` references.
    Compare(CompareArgs),
    /// Write synthetic lattices with planted truths.
    Gen(GenArgs),
    /// Rank every label sequence exhaustively.
    Oracle(OracleArgs),
    /// Train an n-gram model from a label corpus.
    LmTrain(LmTrainArgs),
    /// Time each strategy on random lattices.
    Bench(BenchArgs),
}

/// Search settings shared by the decoding subcommands. Flags override the
/// config file, which overrides the defaults.
#[derive(Args, Debug, Default)]
struct SearchArgs {
    /// `key=value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<String>,
    /// Comma-separated `ctc=..,lm=..,att=..,len=..`; unnamed weights are zero.
    #[arg(long)]
    weights: Option<String>,
    /// Total beam width B'.
    #[arg(long)]
    beam: Option<usize>,
    /// Prioritized beam width B.
    #[arg(long)]
    lsync_beam: Option<usize>,
    /// Frames per block; 0 decodes the lattice as one block.
    #[arg(long)]
    hop: Option<usize>,
    /// N-gram model file.
    #[arg(long)]
    lm: Option<PathBuf>,
    /// `surrogate` or `none`.
    #[arg(long)]
    att: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Log-posterior below which labels are not expanded, or `none`.
    #[arg(long)]
    expansion_floor: Option<String>,
    #[arg(long)]
    max_len: Option<usize>,
}

impl SearchArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                RunConfig::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        let usage = |e: Error| CliError::Usage(e.to_string());
        if let Some(s) = &self.strategy {
            cfg.set("strategy", s).map_err(usage)?;
        }
        if let Some(w) = &self.weights {
            cfg.weights = parse_weights(w).map_err(usage)?;
        }
        if let Some(b) = self.beam {
            cfg.beams.total = b;
        }
        if let Some(b) = self.lsync_beam {
            cfg.beams.lsync = b;
        }
        if let Some(h) = self.hop {
            cfg.hop = h;
        }
        if let Some(p) = &self.lm {
            cfg.lm = Some(p.clone());
        }
        if let Some(a) = &self.att {
            cfg.set("att", a).map_err(usage)?;
        }
        if let Some(t) = self.temperature {
            cfg.temperature = t;
        }
        if let Some(f) = &self.expansion_floor {
            cfg.set("expansion_floor", f).map_err(usage)?;
        }
        if let Some(m) = self.max_len {
            cfg.max_len = Some(m);
        }
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    lattice: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    /// Number of hypotheses to print.
    #[arg(long, default_value_t = 1)]
    nbest: usize,
    /// Write the per-step beam trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    dir: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    /// Length bound for the exhaustive reference; defaults to the longest
    /// the enumeration guard allows, capped at the frame count.
    #[arg(long)]
    oracle_max_len: Option<usize>,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Planted label names, whitespace-separated.
    #[arg(long, conflicts_with = "suite", required_unless_present = "suite")]
    truth: Option<String>,
    /// Label names; defaults to the distinct truth labels in order.
    #[arg(long)]
    vocab: Option<String>,
    #[arg(long, default_value_t = 2)]
    frames_per_label: usize,
    /// Noise mass spread over confusable labels.
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Decoy label names for an adversarial prefix.
    #[arg(long)]
    decoys: Option<String>,
    #[arg(long, default_value_t = 1)]
    decoy_frames: usize,
    /// `lo,hi` range of decoy weights relative to the first truth label.
    #[arg(long, default_value = "1.2,1.6")]
    decoy_weight: String,
    /// Write a seeded suite (`adversarial` or `random`) instead.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Lattice path, or directory in suite mode. The truth goes next to each
    /// lattice with a `.truth` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long)]
    lattice: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    oracle_max_len: Option<usize>,
    #[arg(long, default_value_t = 1)]
    nbest: usize,
}

#[derive(Args, Debug)]
struct LmTrainArgs {
    /// One label sequence per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Label names; defaults to the corpus tokens in order of appearance.
    #[arg(long)]
    vocab: Option<String>,
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Add-k smoothing constant.
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value_t = 1000)]
    frames: usize,
    #[arg(long, default_value_t = 100)]
    labels: usize,
    #[arg(long, default_value_t = 4)]
    utterances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Strategies to time; all by default.
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<String>,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit code.
pub fn run_cli<O: Write, E: Write>(argv: &[String], stdout: &mut O, stderr: &mut E) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            };
        }
    };
    let result = match cli.command {
        Command::Decode(a) => cmd_decode(&a, stdout),
        Command::Compare(a) => cmd_compare(&a, stdout),
        Command::Gen(a) => cmd_gen(&a, stdout),
        Command::Oracle(a) => cmd_oracle(&a, stdout),
        Command::LmTrain(a) => cmd_lm_train(&a, stdout),
        Command::Bench(a) => cmd_bench(&a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Data(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_DATA
        }
    }
}

/// Label scorers owned for the duration of a run.
struct ScorerSet {
    lm: Option<NGramModel>,
    att: Option<SurrogateAttDec>,
}

impl ScorerSet {
    fn load(cfg: &RunConfig, vocab: &Vocabulary) -> CliResult<Self> {
        let lm = match &cfg.lm {
            Some(path) => Some(parse_ngram(&fs::read_to_string(path)?, vocab).map_err(at(path))?),
            None => None,
        };
        if lm.is_none() && cfg.weights.lm > 0.0 {
            log::info!("lm weight is {} but no model is loaded; the term is zero", cfg.weights.lm);
        }
        let att = cfg.surrogate_att.then(|| SurrogateAttDec::new(cfg.temperature)).transpose()?;
        Ok(Self { lm, att })
    }

    fn scorers(&self) -> Scorers<'_> {
        Scorers::new(self.lm.as_ref().map(|m| m as &dyn LabelScorer), self.att.as_ref().map(|a| a as &dyn LabelScorer))
    }
}

struct Decoded {
    ranked: Vec<DecodedHypothesis>,
    trace: Option<DecodeTrace>,
}

fn decode_with(
    cfg: &RunConfig,
    strategy: Strategy,
    lattice: &EmissionMatrix,
    scorers: &Scorers<'_>,
    trace: bool,
) -> Result<Decoded, Error> {
    let mut options = cfg.search_options();
    options.trace |= trace;
    Ok(match strategy {
        Strategy::Fsync => {
            let o = fsync_decode(lattice, scorers, &cfg.weights, cfg.beams.total, &options)?;
            Decoded { ranked: o.ranked, trace: o.trace }
        }
        Strategy::Lsync => {
            let o = lsync_decode(lattice, scorers, &cfg.weights, cfg.beams.total, &options)?;
            Decoded { ranked: o.ranked, trace: o.trace }
        }
        Strategy::Flsync => {
            let schedule = cfg.schedule(lattice.frames())?;
            let o = flsync_decode(lattice, &schedule, scorers, &cfg.weights, cfg.beams, &options)?;
            Decoded { ranked: o.ranked, trace: o.trace }
        }
    })
}

fn load(path: &Path) -> CliResult<EmissionFile> {
    load_emission(path).map_err(at(path))
}

fn write_ranked<O: Write>(vocab: &Vocabulary, ranked: &[DecodedHypothesis], n: usize, out: &mut O) -> CliResult<()> {
    for h in ranked.iter().take(n) {
        writeln!(out, "{}\t{:.6}", vocab.render(&h.labels), h.score)?;
    }
    Ok(())
}

fn cmd_decode<O: Write>(a: &DecodeArgs, out: &mut O) -> CliResult<()> {
    let cfg = a.search.resolve()?;
    let file = load(&a.lattice)?;
    let set = ScorerSet::load(&cfg, &file.vocab)?;
    let decoded =
        decode_with(&cfg, cfg.strategy, &file.matrix, &set.scorers(), a.trace.is_some()).map_err(at(&a.lattice))?;
    write_ranked(&file.vocab, &decoded.ranked, a.nbest, out)?;
    if let (Some(path), Some(trace)) = (&a.trace, &decoded.trace) {
        let mut buf = Vec::new();
        trace.write(&file.vocab, &mut buf)?;
        fs::write(path, buf)?;
    }
    Ok(())
}

/// Longest length the exhaustive search may enumerate, capped at `frames`.
fn default_oracle_len(num_labels: usize, frames: usize) -> usize {
    (0..=frames).take_while(|&l| sequence_count(num_labels, l) <= ENUMERATION_LIMIT).last().unwrap_or(0)
}

fn utterances(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))? {
        let path = entry?.path();
        if path.extension().is_some_and(|x| x == "emit") {
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            found.push((name, path));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(CliError::Data(format!("{}: no .emit files", dir.display())));
    }
    Ok(found)
}

fn compare_one(cfg: &RunConfig, oracle_len: Option<usize>, path: &Path) -> CliResult<(Vocabulary, PruneReport)> {
    let file = load(path)?;
    let truth_path = path.with_extension("truth");
    let text = fs::read_to_string(&truth_path).map_err(|e| CliError::Data(format!("{}: {e}", truth_path.display())))?;
    let truth =
        file.vocab.parse_sequence(text.trim()).map_err(|e| CliError::Data(format!("{}: {e}", truth_path.display())))?;
    let set = ScorerSet::load(cfg, &file.vocab)?;
    let frames = file.matrix.frames();
    let config = CompareConfig {
        weights: cfg.weights,
        beams: cfg.beams,
        hop: if cfg.hop == 0 { frames } else { cfg.hop },
        options: cfg.search_options(),
        oracle_max_len: oracle_len.unwrap_or_else(|| default_oracle_len(file.vocab.len(), frames)),
    };
    let report = compare_strategies(&file.matrix, &truth, &set.scorers(), &config).map_err(at(path))?;
    Ok((file.vocab, report))
}

fn cmd_compare<O: Write>(a: &CompareArgs, out: &mut O) -> CliResult<()> {
    let cfg = a.search.resolve()?;
    let files = utterances(&a.dir)?;
    let reports: Vec<CliResult<(Vocabulary, PruneReport)>> =
        files.par_iter().map(|(_, path)| compare_one(&cfg, a.oracle_max_len, path)).collect();
    let mut summary = SuiteSummary::default();
    writeln!(out, "utterance\tstrategy\tretained\tfirst_drop\tdistance\tbest")?;
    for ((name, _), result) in files.iter().zip(reports) {
        let (vocab, report) = result?;
        let mut buf = Vec::new();
        report.write_records(&vocab, &mut buf)?;
        for line in String::from_utf8_lossy(&buf).lines() {
            writeln!(out, "{name}\t{line}")?;
        }
        summary.add(&report);
    }
    writeln!(out)?;
    summary.write_table(out)?;
    Ok(())
}

fn names(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn write_utterance(path: &Path, vocab: &Vocabulary, lattice: &EmissionMatrix, truth: &[Label]) -> CliResult<()> {
    save_emission(path, vocab, lattice)?;
    fs::write(path.with_extension("truth"), format!("{}\n", vocab.render(truth)))?;
    Ok(())
}

fn cmd_gen<O: Write>(a: &GenArgs, out: &mut O) -> CliResult<()> {
    if let Some(kind) = &a.suite {
        let specs = match kind.as_str() {
            "adversarial" => adversarial_suite(a.count, a.seed),
            "random" => random_suite(a.count, a.seed),
            _ => return Err(CliError::Usage(format!("unknown suite {kind:?}"))),
        };
        fs::create_dir_all(&a.out)?;
        for (k, spec) in specs.iter().enumerate() {
            let vocab = Vocabulary::numbered(spec.num_labels)?;
            let lattice = generate_lattice(spec)?;
            write_utterance(&a.out.join(format!("utt{k:04}.emit")), &vocab, &lattice, &spec.truth)?;
        }
        writeln!(out, "wrote {} utterances to {}", specs.len(), a.out.display())?;
        return Ok(());
    }

    let truth_names = names(a.truth.as_deref().unwrap_or_default());
    let vocab = match &a.vocab {
        Some(v) => Vocabulary::new(names(v))?,
        None => {
            let mut seen: Vec<&str> = Vec::new();
            for &n in truth_names.iter().chain(a.decoys.as_deref().map(names).unwrap_or_default().iter()) {
                if !seen.contains(&n) {
                    seen.push(n);
                }
            }
            Vocabulary::new(seen)?
        }
    };
    let truth = vocab.parse_sequence(&truth_names.join(" "))?;
    let adversarial_prefix = match &a.decoys {
        Some(d) => {
            let (lo, hi) = a
                .decoy_weight
                .split_once(',')
                .and_then(|(lo, hi)| Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?)))
                .ok_or_else(|| CliError::Usage(format!("decoy weight {:?} is not lo,hi", a.decoy_weight)))?;
            Some(AdversarialPrefix { frames: a.decoy_frames, decoys: vocab.parse_sequence(d)?, decoy_weight: (lo, hi) })
        }
        None => None,
    };
    let spec = SyntheticSpec {
        truth,
        num_labels: vocab.len(),
        frames_per_label: a.frames_per_label,
        noise: a.eps,
        adversarial_prefix,
        seed: a.seed,
    };
    let lattice = generate_lattice(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    write_utterance(&a.out, &vocab, &lattice, &spec.truth)?;
    writeln!(out, "wrote {} frames to {}", lattice.frames(), a.out.display())?;
    Ok(())
}

fn cmd_oracle<O: Write>(a: &OracleArgs, out: &mut O) -> CliResult<()> {
    let cfg = a.search.resolve()?;
    let file = load(&a.lattice)?;
    let set = ScorerSet::load(&cfg, &file.vocab)?;
    let max_len = a.oracle_max_len.unwrap_or_else(|| default_oracle_len(file.vocab.len(), file.matrix.frames()));
    let ranked = exhaustive_ranking(&file.matrix, &set.scorers(), &cfg.weights, max_len).map_err(at(&a.lattice))?;
    if ranked.is_empty() {
        return Err(CliError::Data(format!("{}: no sequence has a finite score", a.lattice.display())));
    }
    write_ranked(&file.vocab, &ranked, a.nbest, out)
}

fn cmd_lm_train<O: Write>(a: &LmTrainArgs, out: &mut O) -> CliResult<()> {
    let text = fs::read_to_string(&a.corpus).map_err(|e| CliError::Data(format!("{}: {e}", a.corpus.display())))?;
    let vocab = match &a.vocab {
        Some(v) => Vocabulary::new(names(v))?,
        None => {
            let mut seen: Vec<&str> = Vec::new();
            for w in text.split_whitespace() {
                if !seen.contains(&w) {
                    seen.push(w);
                }
            }
            Vocabulary::new(seen).map_err(|e| CliError::Data(format!("{}: {e}", a.corpus.display())))?
        }
    };
    let corpus = parse_corpus(&text, &vocab).map_err(at(&a.corpus))?;
    let model = NGramModel::train(&corpus, vocab.len(), a.order, a.k).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut buf = Vec::new();
    write_ngram(&model, &vocab, &mut buf)?;
    fs::write(&a.out, buf)?;
    writeln!(out, "trained order-{} model on {} sequences", a.order, corpus.len())?;
    Ok(())
}

fn cmd_bench<O: Write>(a: &BenchArgs, out: &mut O) -> CliResult<()> {
    let cfg = a.search.resolve()?;
    let strategies = if a.strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        a.strategies
            .iter()
            .map(|s| Strategy::parse(s).ok_or_else(|| CliError::Usage(format!("unknown strategy {s:?}"))))
            .collect::<CliResult<_>>()?
    };
    if a.labels == 0 || a.frames == 0 {
        return Err(CliError::Usage("bench needs at least one frame and one label".into()));
    }
    let vocab = Vocabulary::numbered(a.labels)?;
    let lattices: Vec<EmissionMatrix> = (0..a.utterances as u64)
        .map(|k| {
            // Truth long enough to fill the requested frame count.
            let fpl = 2;
            let len = a.frames / fpl + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(k));
            let truth: Vec<Label> = (0..len).map(|_| Label(rng.gen_range(0..a.labels as u32))).collect();
            let spec = SyntheticSpec {
                truth,
                num_labels: a.labels,
                frames_per_label: fpl,
                noise: 0.3,
                adversarial_prefix: None,
                seed: rng.gen(),
            };
            let m = generate_lattice(&spec)?;
            m.truncated(a.frames.min(m.frames()))
        })
        .collect::<Result<_, Error>>()?;
    let set = ScorerSet::load(&cfg, &vocab)?;
    writeln!(out, "strategy\tutterances\tframes\ttotal_ms\tmean_ms")?;
    for s in strategies {
        let start = Instant::now();
        let results: Vec<Result<Decoded, Error>> =
            lattices.par_iter().map(|m| decode_with(&cfg, s, m, &set.scorers(), false)).collect();
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        for r in results {
            r?;
        }
        let frames: usize = lattices.iter().map(EmissionMatrix::frames).sum();
        writeln!(
            out,
            "{}\t{}\t{}\t{:.1}\t{:.1}",
            s.name(),
            lattices.len(),
            frames,
            elapsed,
            elapsed / lattices.len().max(1) as f64
        )?;
    }
    Ok(())
}
