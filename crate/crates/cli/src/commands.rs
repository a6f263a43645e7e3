use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use hetcomp::analysis::{
    nll, render_diversity, render_study, standard_supervisions, study_discrepancy, trajectory_diversity,
    unpopular_items, StudentSpec, UNPOPULAR_SHARE,
};
use hetcomp::curriculum::final_targets;
use hetcomp::data::{kcore_filter, load_interactions, split, InteractionDataset, SplitRatios};
use hetcomp::distill::{rank_unobserved, render_log, train_student, TrainConfig, Variant};
use hetcomp::metrics::{discrepancy, mean_defined, ndcg_eval, recall_at_k, render_metric_rows, MetricRow, RelevanceParams};
use hetcomp::synth::{generate, SynthConfig};
use hetcomp::teacher::{train_teacher, ConsistencyMode, TeacherConfig};
use hetcomp::{EmbeddingModel, ModelKind, TeacherTrajectory};

use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::{AnalyzeArgs, Cli, Command, DataArg, DistillArgs, EnsembleArgs, EvaluateArgs, PrepareArgs, StudyArgs, SynthArgs, TeacherArgs};

const DATA_DIR_ENV: &str = "HETCOMP_DATA_DIR";

// sub-seeds derived from --seed
const SPLIT_OFFSET: u64 = 0;
const TEACHER_OFFSET: u64 = 1;
const STUDENT_INIT_OFFSET: u64 = 2;
const STUDENT_TRAIN_OFFSET: u64 = 3;

struct Ctx {
    settings: Settings,
    manifest: RunManifest,
    seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let mut settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.get("seed", cli.seed, 0u64)?;
    let workers = settings.get("workers", cli.workers, 1usize)?;
    if workers == 0 {
        bail!("--workers must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .context("starting worker pool")?;

    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Prepare(_) => "prepare",
        Command::TrainTeacher(_) => "train-teacher",
        Command::Ensemble(_) => "ensemble",
        Command::Distill(_) => "distill",
        Command::Evaluate(_) => "evaluate",
        Command::AnalyzeTrajectory(_) => "analyze-trajectory",
        Command::StudyDiscrepancy(_) => "study-discrepancy",
    };
    let mut ctx = Ctx {
        settings,
        manifest: RunManifest::new(name),
        seed,
    };
    ctx.manifest.seed = seed;
    let manifest_path = match cli.command {
        Command::Synth(a) => synth(&mut ctx, a)?,
        Command::Prepare(a) => prepare(&mut ctx, a)?,
        Command::TrainTeacher(a) => train(&mut ctx, a)?,
        Command::Ensemble(a) => ensemble(&mut ctx, a)?,
        Command::Distill(a) => distill(&mut ctx, a)?,
        Command::Evaluate(a) => evaluate(&mut ctx, a)?,
        Command::AnalyzeTrajectory(a) => analyze(&mut ctx, a)?,
        Command::StudyDiscrepancy(a) => study(&mut ctx, a)?,
    };
    ctx.settings.check_unused()?;
    ctx.manifest.config = ctx.settings.resolved;
    ctx.manifest.duration = started.elapsed();
    ctx.manifest.write(&manifest_path)
}

fn parse<T: std::str::FromStr>(what: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| anyhow!("bad {what} {raw:?}: {e}"))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(ctx: &mut Ctx, path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    ctx.manifest.outputs.push(path);
    Ok(())
}

/// Pads a TSV table into aligned columns.
fn text_table(tsv: &str) -> String {
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Writes `<stem>.tsv` and its aligned `<stem>.txt` twin and prints the latter.
fn report(ctx: &mut Ctx, dir: &Path, stem: &str, tsv: &str) -> Result<()> {
    let table = text_table(tsv);
    print!("{table}");
    write(ctx, dir.join(format!("{stem}.tsv")), tsv)?;
    write(ctx, dir.join(format!("{stem}.txt")), &table)
}

/// Flag, then config file, then `HETCOMP_DATA_DIR`.
fn data_dir(ctx: &mut Ctx, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
    let flag = flag.map(|p| p.display().to_string());
    let env = std::env::var(DATA_DIR_ENV).ok().filter(|v| !v.is_empty());
    let dir = match ctx.settings.get_opt::<String>(key, flag)? {
        Some(d) => d,
        None => {
            let d = env.ok_or_else(|| anyhow!("pass --{key} or set {DATA_DIR_ENV}"))?;
            ctx.settings.resolved.insert(key.into(), d.clone());
            d
        }
    };
    Ok(PathBuf::from(dir))
}

fn dataset(ctx: &mut Ctx, arg: DataArg) -> Result<InteractionDataset> {
    let dir = data_dir(ctx, "data", arg.data)?;
    ctx.manifest.input_dir(&dir)?;
    InteractionDataset::load(&dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn trajectories(ctx: &mut Ctx, paths: &[PathBuf]) -> Result<Vec<TeacherTrajectory>> {
    paths
        .iter()
        .map(|p| {
            ctx.manifest.input(p)?;
            TeacherTrajectory::load(p).with_context(|| format!("loading trajectory {}", p.display()))
        })
        .collect()
}

fn synth(ctx: &mut Ctx, a: SynthArgs) -> Result<PathBuf> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        num_users: ctx.settings.get("users", a.users, d.num_users)?,
        num_items: ctx.settings.get("items", a.items, d.num_items)?,
        affinity_weight: ctx.settings.get("affinity", a.affinity, d.affinity_weight)?,
        seed: ctx.seed,
        ..d
    };
    let mut text = String::new();
    for p in generate(&cfg) {
        let _ = writeln!(text, "{}\t{}", p.user, p.item);
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(parent)?;
    }
    write(ctx, a.out.clone(), &text)?;
    Ok(a.out.with_extension("manifest"))
}

fn prepare(ctx: &mut Ctx, a: PrepareArgs) -> Result<PathBuf> {
    let out = data_dir(ctx, "out", a.out)?;
    let k = ctx.settings.get("kcore", a.kcore, 10usize)?;
    let ratios = ctx.settings.get("ratios", a.ratios, "0.8,0.1,0.1".to_string())?;
    let r: Vec<f64> = ratios.split(',').map(|s| parse("ratio", s.trim())).collect::<Result<_>>()?;
    let [train, valid, test] = r[..] else {
        bail!("--ratios needs three comma-separated values");
    };
    ctx.manifest.input(&a.input)?;
    let raw = load_interactions(&a.input)?;
    let filtered = kcore_filter(&raw, k);
    if filtered.is_empty() {
        bail!("{}-core filtering removed every interaction of {}", k, a.input.display());
    }
    let (ds, report) = split(&filtered, SplitRatios::new(train, valid, test)?, ctx.seed + SPLIT_OFFSET)?;
    for (user, n) in &report.dropped_users {
        eprintln!("dropped user {user}: only {n} interactions");
    }
    ds.save(&out)?;
    for f in ["manifest.txt", "users.txt", "items.txt", "train.txt", "valid.txt", "test.txt"] {
        ctx.manifest.outputs.push(out.join(f));
    }
    println!(
        "{} users, {} items, {} interactions -> {}",
        ds.num_users,
        ds.num_items,
        ds.num_interactions(),
        out.display()
    );
    Ok(out.join("prepare.manifest"))
}

fn train(ctx: &mut Ctx, a: TeacherArgs) -> Result<PathBuf> {
    let ds = dataset(ctx, a.data)?;
    let kind: ModelKind = parse("kind", &ctx.settings.require::<String>("kind", a.kind)?)?;
    let d = TeacherConfig::new(kind);
    let consistency = match ctx
        .settings
        .get("consistency", a.consistency, "per-checkpoint".to_string())?
        .as_str()
    {
        "per-checkpoint" => ConsistencyMode::PerCheckpoint,
        "converged" => ConsistencyMode::Converged,
        other => bail!("unknown consistency mode {other:?} (per-checkpoint or converged)"),
    };
    let cfg = TeacherConfig {
        kind,
        dim: ctx.settings.get("dim", a.dim, d.dim)?,
        checkpoints: ctx.settings.get("E", a.checkpoints, d.checkpoints)?,
        k: ctx.settings.get("K", a.k, d.k)?,
        lr: ctx.settings.get("lr", a.lr, d.lr)?,
        reg: ctx.settings.get("reg", a.reg, d.reg)?,
        batch_size: ctx.settings.get("batch-size", a.batch_size, d.batch_size)?,
        max_epochs: ctx.settings.get("max-epochs", a.max_epochs, d.max_epochs)?,
        patience: ctx.settings.get("patience", a.patience, d.patience)?,
        min_epochs: ctx.settings.get_opt("min-epochs", a.min_epochs)?,
        consistency,
        seed: ctx.seed + TEACHER_OFFSET,
        ..d
    };
    let name = ctx.settings.get("name", a.name, kind.to_string())?;
    let run = train_teacher(&ds, &cfg).with_context(|| format!("training {name}"))?;
    let mut traj = run.trajectory;
    traj.teacher = name.clone();

    out_dir(&a.out)?;
    let model_path = a.out.join(format!("{name}.model"));
    run.model.save(&model_path)?;
    ctx.manifest.outputs.push(model_path);
    write(ctx, a.out.join(format!("{name}.traj")), &traj.to_text())?;
    let mut log = String::from("epoch\tloss\tR@50_valid\n");
    for r in &run.log {
        let _ = writeln!(log, "{}\t{:.6}\t{:.6}", r.epoch, r.loss, r.recall_valid);
    }
    write(ctx, a.out.join(format!("{name}.log.tsv")), &log)?;
    println!(
        "{name}: converged at epoch {} of {}, checkpoints at {:?}",
        run.converged_epoch,
        run.log.len(),
        run.checkpoint_epochs
    );
    Ok(a.out.join(format!("train-teacher-{name}.manifest")))
}

fn render_rankings(lists: &[Vec<usize>]) -> String {
    let mut out = String::from("# user\tranking\n");
    for (u, l) in lists.iter().enumerate() {
        let items: Vec<String> = l.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{u}\t{}", items.join(" "));
    }
    out
}

fn parse_rankings(path: &Path, num_users: usize) -> Result<Vec<Vec<usize>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lists = vec![Vec::new(); num_users];
    for (idx, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = || anyhow!("{}:{}: expected `<user>\\t<item> <item> ...`", path.display(), idx + 1);
        let (u, items) = line.split_once('\t').ok_or_else(bad)?;
        let u: usize = u.parse().map_err(|_| bad())?;
        if u >= num_users {
            bail!("{}:{}: user {u} out of range", path.display(), idx + 1);
        }
        lists[u] = items
            .split_whitespace()
            .map(|i| i.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
    }
    Ok(lists)
}

fn ensemble(ctx: &mut Ctx, a: EnsembleArgs) -> Result<PathBuf> {
    let trajs = trajectories(ctx, &a.trajectories)?;
    hetcomp::trajectory::check_compatible(&trajs, trajs[0].num_users)?;
    let k_max = trajs.iter().map(|t| t.k).max().unwrap_or(0);
    let k = ctx.settings.get("k", a.k, k_max)?;
    let lambda = ctx.settings.get("lambda", a.lambda, 10.0)?;
    let lists = final_targets(&trajs, lambda, k);
    out_dir(&a.out)?;
    write(ctx, a.out.join("ensemble.tsv"), &render_rankings(&lists))?;
    Ok(a.out.join("ensemble.manifest"))
}

fn train_config(ctx: &mut Ctx, a: &DistillArgs) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let variant: Variant = parse("variant", &ctx.settings.get("variant", a.variant.clone(), "full".to_string())?)?;
    let patience = ctx.settings.get("patience", a.patience, d.patience.unwrap_or(0))?;
    Ok(TrainConfig {
        period: ctx.settings.get("period", a.period, d.period)?,
        alpha0: ctx.settings.get("alpha0", a.alpha0, d.alpha0)?,
        anneal: ctx.settings.get("anneal", a.anneal, d.anneal)?,
        lambda: ctx.settings.get("lambda", a.lambda, d.lambda)?,
        k_dkc: ctx.settings.get("k-dkc", a.k_dkc, d.k_dkc)?,
        n_sample: ctx.settings.get("n-sample", a.n_sample, d.n_sample)?,
        p_minus: ctx.settings.get("p-minus", a.p_minus, d.p_minus)?,
        lr: ctx.settings.get("lr", a.lr, d.lr)?,
        reg: ctx.settings.get("reg", a.reg, d.reg)?,
        max_epochs: ctx.settings.get("epochs", a.epochs, d.max_epochs)?,
        eval_every: ctx.settings.get("eval-every", a.eval_every, d.eval_every)?,
        patience: (patience > 0).then_some(patience),
        seed: ctx.seed + STUDENT_TRAIN_OFFSET,
        variant,
        ..d
    })
}

fn distill(ctx: &mut Ctx, a: DistillArgs) -> Result<PathBuf> {
    let ds = dataset(ctx, DataArg { data: a.data.data.clone() })?;
    let trajs = trajectories(ctx, &a.trajectories)?;
    let mut cfg = train_config(ctx, &a)?;
    cfg.checkpoints = trajs[0].num_checkpoints();
    let kind: ModelKind = parse("student kind", &ctx.settings.get("student-kind", a.student_kind.clone(), "mf".to_string())?)?;
    let dim = ctx.settings.get("student-dim", a.student_dim, 6usize)?;
    let student = EmbeddingModel::new(kind, ds.num_users, ds.num_items, dim, ctx.seed + STUDENT_INIT_OFFSET);
    let out = train_student(student, &trajs, &ds, &cfg).context("distillation failed")?;

    out_dir(&a.out)?;
    let model_path = a.out.join("student.model");
    out.model.save(&model_path)?;
    ctx.manifest.outputs.push(model_path);
    write(ctx, a.out.join("train_log.tsv"), &render_log(&out.log))?;
    let names: Vec<String> = trajs.iter().map(|t| t.teacher.clone()).collect();
    write(ctx, a.out.join("selection.tsv"), &out.state.dump(&names))?;
    if let Some(last) = out.log.last() {
        let converged = (0..ds.num_users).filter(|&u| out.state.all_converged(u)).count();
        println!(
            "{}: {} epochs, D@10 {:.4}, D@50 {:.4}, R@10 {:.4}, {converged}/{} users converged",
            cfg.variant, out.epochs_run, last.d10, last.d50, last.recall10_valid, ds.num_users
        );
    }
    Ok(a.out.join("distill.manifest"))
}

fn evaluate(ctx: &mut Ctx, a: EvaluateArgs) -> Result<PathBuf> {
    let ds = dataset(ctx, a.data)?;
    let against = ctx.settings.get("against", a.against, "testset".to_string())?;
    let (lists, model) = match (&a.model, &a.rankings) {
        (Some(p), _) => {
            ctx.manifest.input(p)?;
            let m = EmbeddingModel::load(p).with_context(|| format!("loading {}", p.display()))?;
            if m.num_users != ds.num_users || m.num_items != ds.num_items {
                bail!(
                    "model is {}x{} but the dataset is {}x{}",
                    m.num_users,
                    m.num_items,
                    ds.num_users,
                    ds.num_items
                );
            }
            (rank_unobserved(&m, &ds, 50), Some(m))
        }
        (None, Some(p)) => {
            ctx.manifest.input(p)?;
            (parse_rankings(p, ds.num_users)?, None)
        }
        (None, None) => bail!("pass --model or --rankings"),
    };
    let mut rows = Vec::new();
    match against.as_str() {
        "testset" => {
            for k in [10, 50] {
                let per_user = |f: fn(&[usize], &[usize], usize) -> f64| {
                    mean_defined(lists.iter().zip(&ds.test_items).map(|(l, t)| (!t.is_empty()).then(|| f(l, t, k))))
                };
                let (r, n) = per_user(recall_at_k);
                rows.push(MetricRow::new("Recall", k, r, n));
                let (v, n) = per_user(ndcg_eval);
                rows.push(MetricRow::new("NDCG", k, v, n));
            }
        }
        "trajectory-final-ensemble" => {
            if a.trajectories.is_empty() {
                bail!("--against trajectory-final-ensemble needs --trajectories");
            }
            let trajs = trajectories(ctx, &a.trajectories)?;
            hetcomp::trajectory::check_compatible(&trajs, ds.num_users)?;
            let lambda = ctx.settings.get("lambda", a.lambda, 10.0)?;
            let k = trajs.iter().map(|t| t.k).max().unwrap_or(0);
            let targets = final_targets(&trajs, lambda, k);
            for k in [10, 50] {
                let p = RelevanceParams::new(lambda, k)?;
                let (v, n) = mean_defined(
                    lists
                        .iter()
                        .zip(&targets)
                        .map(|(l, t)| (!t.is_empty()).then(|| discrepancy(l, t, p))),
                );
                rows.push(MetricRow::new("D", k, v, n));
            }
            if let Some(m) = &model {
                let p_minus = ctx.settings.get("p-minus", a.p_minus, 50usize)?;
                let users = targets.iter().filter(|t| !t.is_empty()).count();
                rows.push(MetricRow::new("NLL", p_minus, nll(m, &ds, &targets, p_minus), users));
            }
        }
        other => bail!("unknown --against {other:?} (testset or trajectory-final-ensemble)"),
    }
    out_dir(&a.out)?;
    report(ctx, &a.out, "evaluate", &render_metric_rows(&rows))?;
    Ok(a.out.join("evaluate.manifest"))
}

fn analyze(ctx: &mut Ctx, a: AnalyzeArgs) -> Result<PathBuf> {
    let ds = dataset(ctx, a.data)?;
    let trajs = trajectories(ctx, &a.trajectories)?;
    let k = ctx.settings.get("k", a.k, 50usize)?;
    let share = ctx.settings.get("unpopular-share", a.unpopular_share, UNPOPULAR_SHARE)?;
    let unpopular = unpopular_items(&ds, share);
    let mut tsv = String::new();
    for (idx, t) in trajs.iter().enumerate() {
        let table = render_diversity(&t.teacher, &trajectory_diversity(t, &unpopular, k));
        // one header for the whole table
        let body = if idx == 0 { &table[..] } else { table.split_once('\n').map_or("", |(_, b)| b) };
        tsv.push_str(body);
    }
    out_dir(&a.out)?;
    report(ctx, &a.out, "diversity", &tsv)?;
    Ok(a.out.join("analyze-trajectory.manifest"))
}

fn study(ctx: &mut Ctx, a: StudyArgs) -> Result<PathBuf> {
    let ds = dataset(ctx, a.data)?;
    let hetero = trajectories(ctx, &a.trajectories)?;
    let homo = trajectories(ctx, &a.homogeneous)?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        lambda: ctx.settings.get("lambda", a.lambda, d.lambda)?,
        p_minus: ctx.settings.get("p-minus", a.p_minus, d.p_minus)?,
        lr: ctx.settings.get("lr", a.lr, d.lr)?,
        max_epochs: ctx.settings.get("epochs", a.epochs, d.max_epochs)?,
        patience: None,
        eval_every: usize::MAX,
        seed: ctx.seed + STUDENT_TRAIN_OFFSET,
        ..d
    };
    let spec = StudentSpec {
        kind: ModelKind::Mf,
        dim: ctx.settings.get("student-dim", a.student_dim, 6usize)?,
        seed: ctx.seed + STUDENT_INIT_OFFSET,
    };
    let sups = standard_supervisions(&hetero, &homo, cfg.lambda);
    let rows = study_discrepancy(&sups, &ds, spec, &cfg)?;
    out_dir(&a.out)?;
    report(ctx, &a.out, "study", &render_study(&rows))?;
    Ok(a.out.join("study-discrepancy.manifest"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_table() {
        assert_eq!(text_table("a\tbb\nccc\td\n"), "a    bb\nccc  d\n");
    }

    #[test]
    fn rankings_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.tsv");
        let lists = vec![vec![3, 1, 2], vec![], vec![0]];
        fs::write(&p, render_rankings(&lists)).unwrap();
        assert_eq!(parse_rankings(&p, 3).unwrap(), lists);
        assert!(parse_rankings(&p, 2).is_err());
    }
}
