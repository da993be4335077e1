//! `raschkit`: Rasch model analyses of 0/1 item response data from CSV.

mod report;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use raschkit::diftest::{dif_report, AnchorSpec, AnchoredWaldOptions, GiniDirection, GlobalDifTest, TwoGroups};
use raschkit::raschmix::{fit_em, MixtureOptions, ScoreKind};
use raschkit::raschtree::{grow, node_profiles, SplitRule, TreeNode, TreeOptions};
use raschkit::sctest::{instability_test, Functional, TestOptions};
use raschkit::{fit_cml, itempar, personpar, Constraint, Error, ExamDataset};
use serde_json::Value;

use report::{num, nums, strs, Obj};

const DEFAULT_SEED: u64 = 20_140_901;

#[derive(Parser, Debug)]
#[command(name = "raschkit", version, about = "Rasch models, DIF tests, Rasch trees and Rasch mixtures")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Input CSV with 0/1 item columns and covariate columns.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Output prefix; writes <prefix>.json and <prefix>-<figure>.svg.
    #[arg(long, global = true, default_value = "raschkit")]
    output: String,
    #[arg(long, global = true, env = "RASCHKIT_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Worker threads for Monte Carlo and refits (default: all cores).
    #[arg(long, global = true, env = "RASCHKIT_THREADS")]
    threads: Option<usize>,
    /// Columns whose name starts with this prefix are items.
    #[arg(long, global = true, default_value = "item")]
    item_prefix: String,
    /// Keep persons with all or no items solved (they carry no information).
    #[arg(long, global = true)]
    keep_extreme: bool,
    /// Restrict to persons with covariate NAME equal to VALUE.
    #[arg(long, global = true, value_name = "NAME=VALUE")]
    subset: Option<String>,
    /// Covariates to treat as ordinal (ordered levels).
    #[arg(long, global = true, value_delimiter = ',')]
    ordinal: Vec<String>,
    /// Covariates to treat as nominal (unordered levels).
    #[arg(long, global = true, value_delimiter = ',')]
    nominal: Vec<String>,
    /// Also write SVG figures.
    #[arg(long, global = true)]
    svg: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-item proportions solved.
    Summary,
    /// CML item parameters and person parameters per raw score.
    Fit,
    /// Global LR, Wald and score tests between two groups.
    Lrtest {
        #[arg(long, default_value = "group")]
        group: String,
    },
    /// Anchored item-wise Wald tests with simultaneous intervals.
    Anchortest {
        #[arg(long, default_value = "group")]
        group: String,
        /// 1-based item index, item label, or `auto` for Gini selection.
        #[arg(long, default_value = "auto")]
        anchor: String,
        #[arg(long, value_enum, default_value_t = Direction::Maximize)]
        gini_direction: Direction,
        #[arg(long, default_value_t = 0.95)]
        coverage: f64,
        #[arg(long, default_value_t = 100_000)]
        nsim: usize,
    },
    /// Score-based parameter instability test along one covariate.
    Sctest {
        #[arg(long)]
        covariate: String,
        #[arg(long, default_value_t = 100_000)]
        nrep: usize,
        /// Trimming for numeric covariates.
        #[arg(long, default_value_t = 0.1)]
        trim: f64,
    },
    /// Rasch tree over the given covariates.
    Tree {
        #[arg(long, value_delimiter = ',', required = true)]
        covariates: Vec<String>,
        #[arg(long, default_value_t = 50)]
        minsize: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 100_000)]
        nrep: usize,
    },
    /// Finite mixture of Rasch models.
    Mix {
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Scores::Meanvar)]
        scores: Scores,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        #[arg(long, default_value_t = 500)]
        maxiter: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Direction {
    Maximize,
    Minimize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Scores {
    Meanvar,
    Saturated,
}

enum Failure {
    Usage(String),
    /// Unreadable input; exits like other data errors.
    Input(String),
    Analysis(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownCovariate(_) => Failure::Usage(e.to_string()),
            e => Failure::Analysis(e),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(written) => {
            for path in written {
                println!("{path}");
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Analysis(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Outcome<Vec<String>> {
    let c = &cli.common;
    if let Some(t) = c.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let input = c
        .input
        .as_ref()
        .ok_or_else(|| Failure::Usage("--input is required".into()))?;
    let mut ds = ExamDataset::load_csv(input, &c.item_prefix).map_err(|e| match e {
        Error::Io(io) => Failure::Input(format!("cannot read {}: {io}", input.display())),
        e => e.into(),
    })?;
    if let Some(spec) = &c.subset {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--subset expects NAME=VALUE, got `{spec}`")))?;
        let mask = ds.mask_eq(name.trim(), value.trim())?;
        ds = ds.subset(&mask)?;
    }
    for name in &c.ordinal {
        ds = ds.as_ordered(name)?;
    }
    for name in &c.nominal {
        ds = ds.as_nominal(name)?;
    }
    let n_loaded = ds.n();
    if !c.keep_extreme && !matches!(cli.command, Command::Summary) {
        ds = ds.exclude_extreme_scores()?;
    }

    let mut figures: Vec<(&str, String)> = Vec::new();
    let result = match &cli.command {
        Command::Summary => summary(&ds, &mut figures),
        Command::Fit => fit(&ds, &mut figures)?,
        Command::Lrtest { group } => lrtest(&ds, group, c.seed, &mut figures)?,
        Command::Anchortest {
            group,
            anchor,
            gini_direction,
            coverage,
            nsim,
        } => {
            let anchor = parse_anchor(anchor, ds.responses.item_labels())?;
            let opts = AnchoredWaldOptions {
                anchor,
                coverage: *coverage,
                nsim: *nsim,
                seed: c.seed,
                direction: match gini_direction {
                    Direction::Maximize => GiniDirection::Maximize,
                    Direction::Minimize => GiniDirection::Minimize,
                },
            };
            anchortest(&ds, group, &opts, &mut figures)?
        }
        Command::Sctest { covariate, nrep, trim } => {
            let opts = TestOptions {
                nrep: *nrep,
                seed: c.seed,
                trim: *trim,
            };
            sctest(&ds, covariate, &opts, &mut figures)?
        }
        Command::Tree {
            covariates,
            minsize,
            alpha,
            nrep,
        } => {
            let opts = TreeOptions {
                alpha: *alpha,
                minsize: *minsize,
                nrep: *nrep,
                seed: c.seed,
                ..Default::default()
            };
            tree(&ds, covariates, &opts, &mut figures)?
        }
        Command::Mix {
            k,
            scores,
            restarts,
            maxiter,
        } => {
            let opts = MixtureOptions {
                maxiter: *maxiter,
                restarts: *restarts,
                seed: c.seed,
                ..Default::default()
            };
            let kind = match scores {
                Scores::Meanvar => ScoreKind::MeanVar,
                Scores::Saturated => ScoreKind::Saturated,
            };
            mix(&ds, *k, kind, &opts, &mut figures)?
        }
    };

    let doc = Obj::new()
        .set("config", config_json(cli))
        .set(
            "data",
            Obj::new()
                .set("items", strs(ds.responses.item_labels()))
                .set("n_loaded", n_loaded)
                .set("n_analysed", ds.n())
                .build(),
        )
        .set("result", result)
        .build();
    let mut written = Vec::new();
    let json_path = format!("{}.json", c.output);
    write(&json_path, &report::to_string(&doc))?;
    written.push(json_path);
    if c.svg {
        for (name, body) in figures {
            let path = format!("{}-{name}.svg", c.output);
            write(&path, &body)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn write(path: &str, body: &str) -> Outcome<()> {
    std::fs::write(path, body).map_err(|e| Failure::Analysis(Error::Io(e)))
}

fn parse_anchor(spec: &str, labels: &[String]) -> Outcome<AnchorSpec> {
    if spec.eq_ignore_ascii_case("auto") {
        return Ok(AnchorSpec::Auto);
    }
    if let Ok(k) = spec.parse::<usize>() {
        if k >= 1 && k <= labels.len() {
            return Ok(AnchorSpec::Item(k - 1));
        }
        return Err(Failure::Usage(format!("anchor {k} out of range 1..={}", labels.len())));
    }
    labels
        .iter()
        .position(|l| l == spec)
        .map(AnchorSpec::Item)
        .ok_or_else(|| Failure::Usage(format!("anchor `{spec}` is neither `auto`, an item number nor an item label")))
}

fn config_json(cli: &Cli) -> Value {
    let c = &cli.common;
    let common = Obj::new()
        .set("input", c.input.as_ref().map(|p| p.display().to_string()))
        .set("output", c.output.clone())
        .set("seed", c.seed)
        .set("threads", c.threads)
        .set("item_prefix", c.item_prefix.clone())
        .set("keep_extreme", c.keep_extreme)
        .set("subset", c.subset.clone())
        .set("ordinal", strs(&c.ordinal))
        .set("nominal", strs(&c.nominal))
        .set("svg", c.svg);
    let (name, opts) = match &cli.command {
        Command::Summary => ("summary", Obj::new()),
        Command::Fit => ("fit", Obj::new()),
        Command::Lrtest { group } => ("lrtest", Obj::new().set("group", group.clone())),
        Command::Anchortest {
            group,
            anchor,
            gini_direction,
            coverage,
            nsim,
        } => (
            "anchortest",
            Obj::new()
                .set("group", group.clone())
                .set("anchor", anchor.clone())
                .set("gini_direction", format!("{gini_direction:?}").to_lowercase())
                .num("coverage", *coverage)
                .set("nsim", *nsim),
        ),
        Command::Sctest { covariate, nrep, trim } => (
            "sctest",
            Obj::new().set("covariate", covariate.clone()).set("nrep", *nrep).num("trim", *trim),
        ),
        Command::Tree {
            covariates,
            minsize,
            alpha,
            nrep,
        } => (
            "tree",
            Obj::new()
                .set("covariates", strs(covariates))
                .set("minsize", *minsize)
                .num("alpha", *alpha)
                .set("nrep", *nrep),
        ),
        Command::Mix {
            k,
            scores,
            restarts,
            maxiter,
        } => (
            "mix",
            Obj::new()
                .set("k", *k)
                .set("scores", format!("{scores:?}").to_lowercase())
                .set("restarts", *restarts)
                .set("maxiter", *maxiter),
        ),
    };
    common.set("command", name).set("options", opts.build()).build()
}

fn summary(ds: &ExamDataset, figures: &mut Vec<(&str, String)>) -> Value {
    let p = ds.item_summary();
    let scores = ds.raw_scores.clone();
    let m = ds.m();
    let mut dist = vec![0usize; m + 1];
    for r in scores {
        dist[r] += 1;
    }
    figures.push(("items", svg::item_bars(ds.responses.item_labels(), &p, "Proportion of persons solving each item")));
    Obj::new()
        .set("items", strs(ds.responses.item_labels()))
        .set("proportion_solved", nums(&p))
        .set("raw_score_counts", dist.clone())
        .set("n", ds.n())
        .set("n_extreme", dist[0] + dist[m])
        .build()
}

fn fit(ds: &ExamDataset, figures: &mut Vec<(&str, String)>) -> Outcome<Value> {
    let fit = fit_cml(&ds.responses, None)?;
    let view = itempar(&fit, Constraint::SumZero)?;
    let persons = personpar(&fit, Constraint::SumZero)?;
    let labels = ds.responses.item_labels();
    figures.push((
        "profile",
        svg::profiles(labels, &[("all".into(), view.beta.clone())], "Item difficulties (sum zero)", "difficulty"),
    ));
    let theta: Vec<f64> = persons.assign(&ds.responses).into_iter().flatten().collect();
    figures.push(("person-item", svg::person_item(labels, &view.beta, &theta)));
    Ok(Obj::new()
        .set("items", strs(labels))
        .set("beta", nums(&view.beta))
        .set("se", nums(&view.se()))
        .set("constraint", "sum-zero")
        .num("loglik", fit.loglik)
        .set("iterations", fit.iterations)
        .num("max_gradient", fit.max_gradient)
        .set(
            "person_parameters",
            Obj::new()
                .set("raw_score", (1..ds.m()).collect::<Vec<_>>())
                .set("theta", nums(&persons.theta))
                .build(),
        )
        .build())
}

fn global_json(t: &GlobalDifTest) -> Value {
    Obj::new()
        .set("test", t.kind.name())
        .num("statistic", t.statistic)
        .set("df", t.df)
        .num("p_value", t.p_value)
        .build()
}

/// Named difficulty series and the two group levels.
type GroupProfiles = (Vec<(String, Vec<f64>)>, [String; 2]);

fn group_profiles(ds: &ExamDataset, group: &str) -> Outcome<GroupProfiles> {
    let groups = TwoGroups::split(ds, group)?;
    let (a, b) = groups.fit(0)?;
    let pa = itempar(&a, Constraint::SumZero)?.beta;
    let pb = itempar(&b, Constraint::SumZero)?.beta;
    let [la, lb] = groups.labels.clone();
    Ok((
        vec![(format!("{group} = {la}"), pa), (format!("{group} = {lb}"), pb)],
        groups.labels,
    ))
}

fn lrtest(ds: &ExamDataset, group: &str, seed: u64, figures: &mut Vec<(&str, String)>) -> Outcome<Value> {
    let opts = AnchoredWaldOptions {
        nsim: 1000,
        seed,
        ..Default::default()
    };
    let rep = dif_report(ds, group, &opts)?;
    let (series, _) = group_profiles(ds, group)?;
    figures.push((
        "groups",
        svg::profiles(ds.responses.item_labels(), &series, "Item difficulties by group (sum zero)", "difficulty"),
    ));
    Ok(Obj::new()
        .set("group", group)
        .set("reference", rep.groups[0].clone())
        .set("focal", rep.groups[1].clone())
        .set("n", vec![rep.fits.0.n(), rep.fits.1.n()])
        .set("lr", global_json(&rep.lr))
        .set("wald", global_json(&rep.wald))
        .set("score", global_json(&rep.score))
        .build())
}

fn anchortest(
    ds: &ExamDataset,
    group: &str,
    opts: &AnchoredWaldOptions,
    figures: &mut Vec<(&str, String)>,
) -> Outcome<Value> {
    let rep = dif_report(ds, group, opts)?;
    let a = &rep.anchored;
    let labels = ds.responses.item_labels();
    let flagged = a.flagged();
    figures.push((
        "anchortest",
        svg::ci_plot(labels, &a.diff, &a.ci_lower, &a.ci_upper, a.anchor, "Anchored item-wise differences"),
    ));
    let (series, _) = group_profiles(ds, group)?;
    figures.push((
        "groups",
        svg::profiles(labels, &series, "Item difficulties by group (sum zero)", "difficulty"),
    ));
    Ok(Obj::new()
        .set("group", group)
        .set("reference", rep.groups[0].clone())
        .set("focal", rep.groups[1].clone())
        .set("anchor", a.anchor + 1)
        .set("anchor_label", labels[a.anchor].clone())
        .set("items", strs(labels))
        .set("difference", nums(&a.diff))
        .set("se", nums(&a.se))
        .set("z", nums(&a.t))
        .set("ci_lower", nums(&a.ci_lower))
        .set("ci_upper", nums(&a.ci_upper))
        .num("critical", a.critical)
        .num("coverage", a.coverage)
        .set("flagged", flagged.iter().map(|j| j + 1).collect::<Vec<_>>())
        .set("flagged_labels", strs(&flagged.iter().map(|&j| labels[j].clone()).collect::<Vec<_>>()))
        .set("lr", global_json(&rep.lr))
        .set("wald", global_json(&rep.wald))
        .set("score", global_json(&rep.score))
        .build())
}

fn sctest(ds: &ExamDataset, covariate: &str, opts: &TestOptions, figures: &mut Vec<(&str, String)>) -> Outcome<Value> {
    let cov = ds.covariate(covariate)?;
    let functional = Functional::for_kind(cov.kind);
    let fit = fit_cml(&ds.responses, None)?;
    let res = instability_test(&fit, &ds.responses, cov, functional, opts)?;
    let labels: Vec<String> = res.per_threshold.iter().map(|t| t.label.clone()).collect();
    let stats: Vec<f64> = res.per_threshold.iter().map(|t| t.statistic).collect();
    if !stats.is_empty() {
        figures.push((
            "sctest",
            svg::sequence(&labels, &stats, res.critical_95, &format!("{} along {covariate}", functional.name())),
        ));
    }
    let thresholds: Vec<Value> = res
        .per_threshold
        .iter()
        .map(|t| {
            Obj::new()
                .set("at_or_below", t.label.clone())
                .num("fraction", t.fraction)
                .num("statistic", t.statistic)
                .build()
        })
        .collect();
    Ok(Obj::new()
        .set("covariate", covariate)
        .set("functional", functional.name())
        .num("statistic", res.statistic)
        .num("p_value", res.p_value)
        .set("df", res.df)
        .set("argmax", res.argmax_threshold().map(|t| t.label.clone()))
        .set("critical_95", res.critical_95.map(num))
        .set("thresholds", thresholds)
        .build())
}

fn node_json(node: &TreeNode) -> Value {
    let tests: Vec<Value> = node
        .tests
        .iter()
        .map(|t| {
            Obj::new()
                .set("covariate", t.result.covariate.clone())
                .set("functional", t.result.functional.name())
                .num("statistic", t.result.statistic)
                .num("p_value", t.result.p_value)
                .num("adjusted_p", t.adjusted_p)
                .build()
        })
        .collect();
    let split = node.split.as_ref().map(|s| {
        let rule = match &s.rule {
            SplitRule::Threshold { label, .. } => Obj::new().set("at_or_below", label.clone()).build(),
            SplitRule::Levels { left, right } => Obj::new().set("left", strs(left)).set("right", strs(right)).build(),
        };
        Obj::new()
            .set("covariate", s.covariate.clone())
            .set("rule", rule)
            .num("loglik", s.loglik)
            .build()
    });
    Obj::new()
        .set("id", node.id)
        .set("depth", node.depth)
        .set("n", node.n())
        .num("loglik", node.fit.loglik)
        .set("tests", tests)
        .set("split", split)
        .set("children", node.children.iter().map(node_json).collect::<Vec<_>>())
        .build()
}

fn tree(ds: &ExamDataset, covariates: &[String], opts: &TreeOptions, figures: &mut Vec<(&str, String)>) -> Outcome<Value> {
    let names: Vec<&str> = covariates.iter().map(String::as_str).collect();
    let tree = grow(ds, &names, opts)?;
    let profiles = node_profiles(&tree)?;
    let leaf_beta: Vec<(usize, Vec<f64>)> = profiles.iter().map(|(id, v)| (*id, v.beta.clone())).collect();
    figures.push(("tree", svg::tree(&tree, &leaf_beta)));
    let leaves: Vec<Value> = profiles
        .iter()
        .map(|(id, v)| {
            Obj::new()
                .set("id", *id)
                .set("n", tree.find(*id).map_or(0, TreeNode::n))
                .set("beta", nums(&v.beta))
                .build()
        })
        .collect();
    Ok(Obj::new()
        .set("items", strs(ds.responses.item_labels()))
        .set("n_leaves", leaves.len())
        .set("leaves", leaves)
        .set("root", node_json(&tree))
        .set("text", tree.render())
        .build())
}

fn mix(ds: &ExamDataset, k: usize, kind: ScoreKind, opts: &MixtureOptions, figures: &mut Vec<(&str, String)>) -> Outcome<Value> {
    let fit = fit_em(&ds.responses, k, kind, opts)?;
    let labels = ds.responses.item_labels();
    let series: Vec<(String, Vec<f64>)> = fit
        .beta
        .iter()
        .enumerate()
        .map(|(c, b)| (format!("component {} (n = {})", c + 1, fit.cluster_sizes[c]), b.clone()))
        .collect();
    figures.push(("mixture", svg::profiles(labels, &series, "Item difficulties by mixture component", "difficulty")));
    let components: Vec<Value> = (0..k)
        .map(|c| {
            let s = &fit.score_models[c];
            Obj::new()
                .set("size", fit.cluster_sizes[c])
                .num("weight", fit.weights[c])
                .set("beta", nums(&fit.beta[c]))
                .set("score_model", s.kind.name())
                .set("score_params", nums(&s.params))
                .set("score_fallback", s.fallback)
                .build()
        })
        .collect();
    Ok(Obj::new()
        .set("k", k)
        .set("items", strs(labels))
        .set("cluster_sizes", fit.cluster_sizes.clone())
        .set("components", components)
        .num("loglik", fit.loglik)
        .num("bic", fit.bic)
        .set("n_params", fit.n_params)
        .set("iterations", fit.iterations)
        .set("converged", fit.converged)
        .set("assignment", fit.hard_assignment().iter().map(|c| c + 1).collect::<Vec<_>>())
        .build())
}
