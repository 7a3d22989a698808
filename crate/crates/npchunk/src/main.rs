use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use npchunk::config::{self, FileConfig, Overrides};
use npchunk::io;
use npchunk::service::{AppState, ServiceOptions};
use npchunk::store::{read_log, LogStore};
use npchunk::trainer::ThreadedTrainer;
use npchunk::{Error, Result};
use npchunk_core::al::{ActiveLearner, AlConfig, Measure, OracleAnnotator, SplitMethod, Strategy};
use npchunk_core::corpus::{LabeledSentence, Labeling};
use npchunk_core::cost::{self, labor_time, monetary_cost, Method, SessionEvent};
use npchunk_core::dsl::{apply_program, parse_rule_file_lenient, MacroTable};
use npchunk_core::metrics::{evaluate_corpus, Beta, EvalReport};
use npchunk_core::session::{
    events_from_log, rule_submissions, Command, LogEntry, Mode, SessionCorpus,
};
use npchunk_core::synth::{generate, SynthConfig};
use npchunk_core::tbl::learn_rules_traced;

#[derive(Parser, Debug)]
#[command(
    name = "npchunk",
    version,
    about = "Base noun-phrase chunking workbench"
)]
struct Cli {
    /// TOML run configuration; explicit flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    measure: Option<MeasureArg>,
    #[arg(long, global = true, value_enum)]
    split: Option<SplitArg>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    init_size: Option<usize>,
    #[arg(long, global = true)]
    committee: Option<usize>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Minimum net error reduction for a learned rule.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    max_rules: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MeasureArg {
    VoteEntropy,
    FComplement,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Bagging,
    Nfold,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Annotation,
    RuleWriting,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Learn a chunker from a CoNLL file and score it.
    Train {
        train: PathBuf,
        /// Scored instead of the training data when given.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Simulate active learning with gold labels standing in for the annotator.
    AlSim {
        train: PathBuf,
        test: PathBuf,
        /// Also run sequential annotation and write its curve here.
        #[arg(long)]
        sequential_out: Option<PathBuf>,
    },
    /// Score a rule list against gold data, rule by rule.
    RulesEval { rules: PathBuf, gold: PathBuf },
    /// Labor time and dollar cost of a session log.
    CostReport {
        /// Session log (JSONL), as written by `serve` or exported from it.
        events: PathBuf,
        /// TOML cost parameters; the shipped defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Gold data for a learning curve of the logged rule lists.
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Run the HTTP session service.
    Serve {
        /// `NAME=TRAIN,TEST`, repeatable.
        #[arg(long = "corpus", required = true)]
        corpora: Vec<String>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory for session logs; sessions are in memory only without it.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        /// Selections that may run at once.
        #[arg(long, default_value_t = 2)]
        workers: usize,
        /// Re-run logged selections when loading sessions.
        #[arg(long)]
        verify: bool,
    },
    /// Write a synthetic chunked corpus.
    Synth {
        #[arg(long, default_value_t = 2000)]
        sentences: usize,
        /// Sentences held out into the test file.
        #[arg(long, default_value_t = 500)]
        test_size: usize,
        #[arg(long)]
        test_out: Option<PathBuf>,
        #[arg(long)]
        rare_rate: Option<f64>,
        #[arg(long)]
        pos_noise: Option<f64>,
    },
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            init_size: self.init_size,
            batch_size: self.batch_size,
            committee: self.committee,
            split: self.split.map(|s| match s {
                SplitArg::Bagging => SplitMethod::Bagging,
                SplitArg::Nfold => SplitMethod::Nfold,
            }),
            measure: self.measure.map(|m| match m {
                MeasureArg::VoteEntropy => Measure::VoteEntropy,
                MeasureArg::FComplement => Measure::FComplement,
            }),
            iterations: self.iterations,
            threshold: self.threshold,
            max_rules: self.max_rules,
        }
    }

    fn file_config(&self) -> Result<FileConfig> {
        self.config
            .as_deref()
            .map_or(Ok(FileConfig::default()), config::load_file_config)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("npchunk: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let file = cli.file_config()?;
    let flags = cli.overrides();
    match &cli.command {
        Cmd::Train { train, test } => cmd_train(cli, &file, &flags, train, test.as_deref()),
        Cmd::AlSim {
            train,
            test,
            sequential_out,
        } => cmd_al_sim(
            cli,
            &config::resolve_al(&file, &flags),
            train,
            test,
            sequential_out.as_deref(),
        ),
        Cmd::RulesEval { rules, gold } => cmd_rules_eval(cli, rules, gold),
        Cmd::CostReport {
            events,
            params,
            method,
            gold,
        } => cmd_cost_report(
            cli,
            &file,
            events,
            params.as_deref(),
            *method,
            gold.as_deref(),
        ),
        Cmd::Serve {
            corpora,
            addr,
            log_dir,
            workers,
            verify,
        } => cmd_serve(corpora, *addr, log_dir.clone(), *workers, *verify),
        Cmd::Synth {
            sentences,
            test_size,
            test_out,
            rare_rate,
            pos_noise,
        } => {
            let mut c = SynthConfig {
                sentences: *sentences,
                seed: flags.seed.or(file.seed).unwrap_or(0),
                ..SynthConfig::default()
            };
            c.rare_rate = rare_rate.unwrap_or(c.rare_rate);
            c.pos_noise = pos_noise.unwrap_or(c.pos_noise);
            cmd_synth(cli, &c, *test_size, test_out.as_deref())
        }
    }
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(path) => io::write_atomic(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(
        || p.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

fn score(
    chunker_apply: impl Fn(&npchunk_core::corpus::Sentence) -> Labeling,
    data: &[LabeledSentence],
) -> Result<EvalReport> {
    let gold: Vec<Labeling> = data.iter().map(|(_, l)| l.clone()).collect();
    let proposed: Vec<Labeling> = data.iter().map(|(s, _)| chunker_apply(s)).collect();
    Ok(evaluate_corpus(&gold, &proposed, Beta::ONE)?)
}

fn cmd_train(
    cli: &Cli,
    file: &FileConfig,
    flags: &Overrides,
    train: &Path,
    test: Option<&Path>,
) -> Result<()> {
    let tbl = config::resolve_tbl(file, flags);
    let data = io::read_conll(train, 0)?;
    let (chunker, steps) = learn_rules_traced(data.iter().map(|(s, l)| (s, l)), &tbl)?;
    let mut meta = vec![
        kv("tool", concat!("npchunk ", env!("CARGO_PKG_VERSION"))),
        kv("train", file_name(train)),
        kv("train_sha256", io::corpus_digest([data.as_slice()])),
        kv("sentences", data.len()),
        kv("seed", flags.seed.or(file.seed).unwrap_or(0)),
        kv("score_threshold", tbl.score_threshold),
        kv("max_rules", tbl.max_rules),
        kv(
            "templates",
            tbl.templates
                .iter()
                .map(u8::to_string)
                .collect::<Vec<_>>()
                .join(","),
        ),
        kv("rules", chunker.rules.len()),
    ];
    let (label, eval) = match test {
        Some(t) => ("test", io::read_conll(t, 0)?),
        None => ("train", data.clone()),
    };
    let baseline = npchunk_core::tbl::Chunker {
        initial: chunker.initial.clone(),
        rules: Vec::new(),
    };
    let initial = score(|s| baseline.apply(s), &eval)?;
    let learned = score(|s| chunker.apply(s), &eval)?;
    meta.push(kv("eval", label));
    let mut text = io::metadata_header(&meta);
    text.push_str(&chunker.serialize());
    match &cli.out {
        Some(path) => io::write_atomic(path, &text)?,
        None => print!("{text}"),
    }
    let mut report = String::new();
    let _ = writeln!(report, "eval: {label}");
    let _ = writeln!(report, "rules: {}", chunker.rules.len());
    let _ = writeln!(report, "initial_fmeasure: {:.6}", initial.fmeasure);
    report.push_str(&learned.to_key_values());
    if let Some(last) = steps.last() {
        let _ = writeln!(report, "training_errors: {}", last.errors_after);
    }
    if cli.out.is_some() {
        print!("{report}");
    } else {
        eprint!("{report}");
    }
    Ok(())
}

fn simulate(
    config: &AlConfig,
    train: &[LabeledSentence],
    test: &[LabeledSentence],
    strategy: Strategy,
) -> Result<String> {
    let sentences: Vec<_> = train.iter().map(|(s, _)| s.clone()).collect();
    let mut oracle = OracleAnnotator::new(train);
    let mut learner = ActiveLearner::with_trainer(
        &sentences,
        test,
        config.clone(),
        strategy,
        ThreadedTrainer::default(),
    )?;
    while learner.step(&mut oracle)? {
        if let Some(r) = learner.history().rows.last() {
            log::info!(
                "iteration {}: {} words, test F {:.4}",
                r.iteration,
                r.words,
                r.test.fmeasure
            );
        }
    }
    Ok(learner.into_history().to_csv())
}

fn cmd_al_sim(
    cli: &Cli,
    config: &AlConfig,
    train: &Path,
    test: &Path,
    sequential_out: Option<&Path>,
) -> Result<()> {
    let train_data = io::read_conll(train, 0)?;
    let test_data = io::read_conll(test, 0)?;
    let inputs = format!(
        "# train: {}\n# train_sha256: {}\n# test: {}\n# test_sha256: {}\n",
        file_name(train),
        io::corpus_digest([train_data.as_slice()]),
        file_name(test),
        io::corpus_digest([test_data.as_slice()]),
    );
    let committee = simulate(config, &train_data, &test_data, Strategy::Committee)?;
    emit(cli, &format!("{inputs}{committee}"))?;
    if let Some(path) = sequential_out {
        let sequential = simulate(config, &train_data, &test_data, Strategy::Sequential)?;
        io::write_atomic(path, &format!("{inputs}{sequential}"))?;
    }
    Ok(())
}

fn cmd_rules_eval(cli: &Cli, rules: &Path, gold: &Path) -> Result<()> {
    let text = io::read_text(rules)?;
    let gold_data = io::read_conll(gold, 0)?;
    let result = npchunk_core::session::evaluate_rules(&text, &gold_data);
    for d in &result.diagnostics {
        eprintln!("{}:{}: {}", rules.display(), d.line, d.message);
    }
    let mut out = io::metadata_header(&[
        kv("rules_file", file_name(rules)),
        kv("rules_sha256", io::sha256_hex(text.as_bytes())),
        kv("gold", file_name(gold)),
        kv("gold_sha256", io::corpus_digest([gold_data.as_slice()])),
    ]);
    let _ = writeln!(out, "rules: {}", result.rules);
    let _ = writeln!(out, "diagnostics: {}", result.diagnostics.len());
    let _ = writeln!(out, "initial_fmeasure: {:.6}", result.initial_f);
    out.push_str(&result.report.to_key_values());
    out.push_str("\nline,fmeasure,delta,rule\n");
    for d in &result.deltas {
        let _ = writeln!(
            out,
            "{},{:.6},{:+.6},\"{}\"",
            d.line,
            d.fmeasure,
            d.delta,
            d.rule.replace('"', "\"\"")
        );
    }
    emit(cli, &out)
}

/// Reads either a session log or a plain event list, both JSONL.
fn read_events(path: &Path) -> Result<(Vec<SessionEvent>, Vec<LogEntry>)> {
    let text = io::read_text(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty());
    let is_session_log = first.is_none_or(|l| l.contains("\"command\""));
    if is_session_log {
        let log = read_log(path)?;
        return Ok((events_from_log(&log), log));
    }
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: SessionEvent = serde_json::from_str(line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", i + 1),
        })?;
        events.push(e);
    }
    Ok((events, Vec::new()))
}

fn cmd_cost_report(
    cli: &Cli,
    file: &FileConfig,
    events_path: &Path,
    params: Option<&Path>,
    method: Option<MethodArg>,
    gold: Option<&Path>,
) -> Result<()> {
    let (events, log) = read_events(events_path)?;
    let logged_mode = log.first().and_then(|e| match &e.command {
        Command::Create { mode, .. } => Some(match mode {
            Mode::Annotation => Method::Annotation,
            Mode::RuleWriting => Method::RuleWriting,
        }),
        _ => None,
    });
    let method = method
        .map(|m| match m {
            MethodArg::Annotation => Method::Annotation,
            MethodArg::RuleWriting => Method::RuleWriting,
        })
        .or(logged_mode);
    let (params_source, cost_file) = match params {
        Some(p) => (file_name(p), config::load_cost_file(p)?),
        None => match &file.cost {
            Some(c) => ("config".to_string(), c.clone()),
            None => ("defaults".to_string(), config::default_cost_file()),
        },
    };
    let params = cost_file.resolve(method);
    let hours = labor_time(&events);
    let dollars = monetary_cost(&params, hours)?;
    let mut out = io::metadata_header(&[
        kv("events", file_name(events_path)),
        kv("params", params_source),
        kv("method", params.method.as_str()),
        kv("idc", params.idc),
        kv("s0", params.s0),
        kv("ac_tb", params.ac_tb),
        kv("lc", params.lc),
        kv("mc", params.mc),
    ]);
    let _ = writeln!(out, "events: {}", events.len());
    let _ = writeln!(
        out,
        "labor_intervals: {}",
        cost::labor_intervals(&events).len()
    );
    let _ = writeln!(out, "labor_hours: {hours:.6}");
    let _ = writeln!(out, "labor_minutes: {:.3}", hours * 60.0);
    let _ = writeln!(out, "cost: {dollars:.2}");
    if let Some(gold) = gold {
        let gold_data = io::read_conll(gold, 0)?;
        let macros = MacroTable::default();
        let unbracketed: Vec<_> = gold_data
            .iter()
            .map(|(s, _)| (s.clone(), Vec::new()))
            .collect();
        let checkpoints: Vec<(f64, String)> = rule_submissions(&log)
            .into_iter()
            .map(|(s, t)| (s, t.to_string()))
            .collect();
        let curve = cost::learning_curve(&events, &checkpoints, |text| {
            let (program, _) = parse_rule_file_lenient(text, &macros);
            let proposed: Vec<Labeling> = apply_program(&program, &unbracketed)
                .into_iter()
                .map(|(s, spans)| {
                    Labeling::from_spans(&spans, s.len()).expect("rule output is valid")
                })
                .collect();
            let reference: Vec<Labeling> = gold_data.iter().map(|(_, l)| l.clone()).collect();
            evaluate_corpus(&reference, &proposed, Beta::ONE)
                .expect("gold is non-empty and aligned")
        });
        out.push('\n');
        out.push_str(&cost::curve_csv(&curve));
    }
    emit(cli, &out)
}

fn parse_corpus_arg(arg: &str) -> Result<SessionCorpus> {
    let usage = || Error::Other(format!("--corpus `{arg}`: expected NAME=TRAIN,TEST"));
    let (name, files) = arg.split_once('=').ok_or_else(usage)?;
    let (train, test) = files.split_once(',').ok_or_else(usage)?;
    let (train, test) = (Path::new(train), Path::new(test));
    let train_data = io::read_conll(train, 0)?;
    let test_first = train_data.len() as u32;
    let test_data = io::read_conll(test, test_first)?;
    let digest = io::corpus_digest([train_data.as_slice(), test_data.as_slice()]);
    Ok(SessionCorpus::new(name, train_data, test_data)?.with_digest(digest))
}

fn cmd_serve(
    corpora: &[String],
    addr: SocketAddr,
    log_dir: Option<PathBuf>,
    workers: usize,
    verify: bool,
) -> Result<()> {
    let corpora = corpora
        .iter()
        .map(|c| parse_corpus_arg(c))
        .collect::<Result<Vec<_>>>()?;
    let store = log_dir.map(LogStore::open).transpose()?;
    let runtime = tokio::runtime::Runtime::new().map_err(|source| Error::Io {
        path: PathBuf::from("<runtime>"),
        source,
    })?;
    runtime.block_on(async move {
        let options = ServiceOptions {
            store,
            workers,
            verify_on_load: verify,
            ..ServiceOptions::default()
        };
        let state = AppState::new(corpora, options)?;
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| Error::Io {
                path: PathBuf::from(addr.to_string()),
                source,
            })?;
        log::warn!("listening on http://{addr}");
        npchunk::service::serve(listener, state)
            .await
            .map_err(|e| Error::Other(e.to_string()))
    })
}

fn cmd_synth(
    cli: &Cli,
    config: &SynthConfig,
    test_size: usize,
    test_out: Option<&Path>,
) -> Result<()> {
    let data = generate(config);
    let split = data.len().saturating_sub(test_size.min(data.len()));
    let (train, test) = data.split_at(split);
    eprint!(
        "{}",
        io::metadata_header(&[
            kv("sentences", config.sentences),
            kv("seed", config.seed),
            kv("rare_rate", config.rare_rate),
            kv("pos_noise", config.pos_noise),
            kv("train", train.len()),
            kv("test", test.len()),
        ])
    );
    match test_out {
        Some(path) => {
            io::write_conll(path, test)?;
            emit(
                cli,
                &npchunk_core::corpus::emit_conll(train.iter().map(|(s, l)| (s, l))),
            )
        }
        None => emit(
            cli,
            &npchunk_core::corpus::emit_conll(data.iter().map(|(s, l)| (s, l))),
        ),
    }
}
