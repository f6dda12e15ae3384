use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use compbind::checkpoint::{
    denoiser_checkpoint, denoiser_from_checkpoint, encoder_checkpoint, encoder_from_checkpoint, projection_checkpoint,
    projection_from_checkpoint, Checkpoint,
};
use compbind::contrib::compare_encoders;
use compbind::correct::{optimize_embedding, train_projection, write_loss_csv, EmbedOptConfig, ProjectionKind, ProjectionParams, TokenMask};
use compbind::diffusion::{sample, write_cross_attn_csv};
use compbind::encoder::{encode, EncoderParams};
use compbind::evalkit::{
    comparison_table, composition_score, feature_stats, plot_tradeoff, tradeoff_curve, write_table_csv, write_tradeoff_csv,
};
use compbind::pipeline::{image_seed, pretrain, Pipeline, Variant};
use compbind::reweight::{
    default_grid, default_layers, evaluate_reweighting, grid_search_params, write_score_table_csv, ReweightParams,
};
use compbind::synthworld::{
    gen_corpus, heldout_scenes, make_prompt, read_corpus, render_scene, tokenize, tuning_scenes, Image, PromptTemplate,
};

use crate::config::{invalid, RunConfig};
use crate::output::Run;
use crate::{Cli, Command, Global, Invalid, Models, VariantArgs};

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    if g.threads == 0 {
        return Err(Invalid("--threads must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(g.threads)
        .build_global()
        .context("configuring the worker pool")?;
    let cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let name = command_name(&cli.command);
    let mut run = Run::start(name, &g.out)?;
    run.record("seed", g.seed);
    if let Some(p) = &g.config {
        run.input("config", p)?;
    }
    match cli.command {
        Command::GenData { clean } => gen_data(&g, &cfg, clean, &mut run)?,
        Command::Pretrain { data } => pretrain_cmd(&g, &cfg, &data, &mut run)?,
        Command::AnalyzeAttn { encoder, against, tags } => analyze_attn(&encoder, &against, &tags, &mut run)?,
        Command::ReweightSearch { models } => reweight_search(&g, &cfg, &models, &mut run)?,
        Command::OptimizeEmbed { models, prompt } => optimize_embed(&g, &cfg, &models, &prompt, &mut run)?,
        Command::TrainClp { models, data } => train_adapter(&g, &cfg, &models, &data, ProjectionKind::Clp, &mut run)?,
        Command::TrainWiclp { models, data } => train_adapter(&g, &cfg, &models, &data, ProjectionKind::Wiclp, &mut run)?,
        Command::Sample {
            models,
            prompt,
            n,
            variant,
            record,
        } => sample_cmd(&g, &cfg, &models, &prompt, n, &variant, &record, &mut run)?,
        Command::Eval { models, variant } => eval_cmd(&g, &cfg, &models, &variant, &mut run)?,
        Command::Tradeoff { models, proj, taus } => tradeoff_cmd(&g, &cfg, &models, &proj, &taus, &mut run)?,
        Command::Table {
            models,
            clp,
            wiclp,
            reweight,
        } => table_cmd(&g, &cfg, &models, &clp, &wiclp, reweight.as_deref(), &mut run)?,
    }
    let written = run.commit(&cfg.to_text())?;
    for f in written {
        println!("{}", g.out.join(f).display());
    }
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenData { clean: true } => "gen-data-clean",
        Command::GenData { .. } => "gen-data",
        Command::Pretrain { .. } => "pretrain",
        Command::AnalyzeAttn { .. } => "analyze-attn",
        Command::ReweightSearch { .. } => "reweight-search",
        Command::OptimizeEmbed { .. } => "optimize-embed",
        Command::TrainClp { .. } => "train-clp",
        Command::TrainWiclp { .. } => "train-wiclp",
        Command::Sample { .. } => "sample",
        Command::Eval { .. } => "eval",
        Command::Tradeoff { .. } => "tradeoff",
        Command::Table { .. } => "table",
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Invalid(format!("missing {what}: {}", path.display())).into());
    }
    Ok(())
}

fn load_checkpoint(path: &Path, what: &str, run: &mut Run) -> Result<Checkpoint> {
    require(path, what)?;
    run.input(what, path)?;
    Checkpoint::load(path).with_context(|| format!("loading {what} {}", path.display()))
}

fn load_encoder(path: &Path, what: &str, run: &mut Run) -> Result<EncoderParams> {
    Ok(encoder_from_checkpoint(&load_checkpoint(path, what, run)?)?)
}

fn load_pipeline(cfg: &RunConfig, models: &Models, run: &mut Run) -> Result<Pipeline> {
    // Both paths are checked before either is read so the message names
    // whichever is missing.
    require(&models.encoder, "encoder checkpoint")?;
    require(&models.denoiser, "denoiser checkpoint")?;
    let enc = load_encoder(&models.encoder, "encoder", run)?;
    let den = denoiser_from_checkpoint(&load_checkpoint(&models.denoiser, "denoiser", run)?)?;
    Ok(Pipeline::new(enc, den, cfg.schedule()?)?)
}

fn load_projection(path: &Path, what: &str, run: &mut Run) -> Result<ProjectionParams> {
    Ok(projection_from_checkpoint(&load_checkpoint(path, what, run)?)?)
}

fn parse_prompt(text: &str) -> Result<PromptTemplate> {
    let tokens = tokenize(text).map_err(invalid)?;
    Ok(PromptTemplate::parse(&tokens).map_err(invalid)?)
}

fn gen_data(g: &Global, cfg: &RunConfig, clean: bool, run: &mut Run) -> Result<()> {
    let mut cc = cfg.corpus(g.seed)?;
    if clean {
        cc.p_corrupt = 0.0;
    }
    run.record("clean", clean);
    let corpus = gen_corpus(&cc)?;
    let name = if clean { "clean.cbd" } else { "corpus.cbd" };
    compbind::synthworld::write_corpus(&run.path(name), &corpus, &cc)?;
    eprintln!("{} samples, {:.3} corrupted", corpus.len(), corpus.corrupted_fraction());
    Ok(())
}

fn pretrain_cmd(g: &Global, cfg: &RunConfig, data: &Path, run: &mut Run) -> Result<()> {
    require(data, "corpus")?;
    run.input("data", data)?;
    let pc = cfg.pretrain(g.seed)?;
    let corpus = read_corpus(data)?;
    let (pipe, log) = pretrain(&corpus.samples, &cfg.schedule()?, &pc)?;
    encoder_checkpoint(&pipe.encoder).save(&run.path("encoder.ckpt"))?;
    denoiser_checkpoint(&pipe.denoiser).save(&run.path("denoiser.ckpt"))?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in log.losses.iter().enumerate() {
        writeln!(csv, "{i},{l}")?;
    }
    std::fs::write(run.path("pretrain_loss.csv"), csv)?;
    if let Some(last) = log.losses.last() {
        eprintln!("final minibatch loss {last:.5}");
    }
    Ok(())
}

fn analyze_attn(encoder: &Path, against: &Path, tags: &str, run: &mut Run) -> Result<()> {
    let tags: Vec<&str> = tags.split(',').map(str::trim).collect();
    if tags.len() != 2 || tags.iter().any(|t| t.is_empty()) || tags[0] == tags[1] {
        return Err(Invalid(format!("--tags needs two distinct names, got `{}`", tags.join(","))).into());
    }
    require(encoder, "encoder checkpoint")?;
    require(against, "comparison encoder checkpoint")?;
    let a = load_encoder(encoder, "encoder", run)?;
    let b = load_encoder(against, "against", run)?;
    let prompts = heldout_scenes().iter().map(make_prompt).collect::<compbind::Result<Vec<_>>>()?;
    let (ra, rb) = compare_encoders((&a, tags[0]), (&b, tags[1]), "heldout", &prompts, Some(&run.path("")))?;
    eprintln!("mean unintended layers: {} {:.3}, {} {:.3}", tags[0], ra.mean_count(), tags[1], rb.mean_count());
    Ok(())
}

fn reweight_search(g: &Global, cfg: &RunConfig, models: &Models, run: &mut Run) -> Result<()> {
    let pipe = load_pipeline(cfg, models, run)?;
    let grid = default_grid(&default_layers(pipe.encoder.config.layers));
    let (best, rows) = grid_search_params(&grid, &tuning_scenes(), &pipe, cfg.usize("eval.tuning_seeds")?, g.seed)?;
    write_score_table_csv(&run.path("reweight_grid.csv"), &rows)?;
    std::fs::write(run.path("reweight.params"), reweight_to_text(&best))?;
    let eval = evaluate_reweighting(&best, &heldout_scenes(), &pipe, cfg.usize("eval.seeds")?, g.seed)?;
    std::fs::write(
        run.path("reweight_eval.csv"),
        format!(
            "baseline,reweighted,delta,n\n{:.6},{:.6},{:.6},{}\n",
            eval.baseline,
            eval.reweighted,
            eval.delta(),
            eval.n_images
        ),
    )?;
    eprintln!("best {best:?}: held-out delta {:+.4}", eval.delta());
    Ok(())
}

fn reweight_to_text(p: &ReweightParams) -> String {
    let layers: Vec<String> = p.layers.iter().map(|l| l.to_string()).collect();
    format!(
        "neg_big = {}\npos = {}\nneg_small = {}\nlayers = {}\n",
        p.neg_big,
        p.pos,
        p.neg_small,
        layers.join(",")
    )
}

fn load_reweight(path: &Path, run: &mut Run) -> Result<ReweightParams> {
    require(path, "reweight parameters")?;
    run.input("reweight", path)?;
    let text = std::fs::read_to_string(path)?;
    let mut vals = [None::<f32>; 3];
    let mut layers = None;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Invalid(format!("bad reweight line `{line}`")))?;
        let v = v.trim();
        let num = || v.parse::<f32>().map_err(|_| Invalid(format!("bad reweight value `{v}`")));
        match k.trim() {
            "neg_big" => vals[0] = Some(num()?),
            "pos" => vals[1] = Some(num()?),
            "neg_small" => vals[2] = Some(num()?),
            "layers" => {
                layers = Some(
                    v.split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| Invalid(format!("bad reweight layers `{v}`")))?,
                )
            }
            other => return Err(Invalid(format!("unknown reweight key `{other}`")).into()),
        }
    }
    match (vals, layers) {
        ([Some(nb), Some(p), Some(ns)], Some(l)) => Ok(ReweightParams::new(nb, p, ns, l).map_err(invalid)?),
        _ => Err(Invalid(format!("{} lacks a reweight entry", path.display())).into()),
    }
}

fn optimize_embed(g: &Global, cfg: &RunConfig, models: &Models, text: &str, run: &mut Run) -> Result<()> {
    let prompt = parse_prompt(text)?;
    let pipe = load_pipeline(cfg, models, run)?;
    run.record("prompt", text);
    let scene = prompt.scene()?;
    let images = vec![render_scene(&scene)];
    let mask = TokenMask::preset(&prompt, cfg.mask()?);
    let oc = EmbedOptConfig {
        steps: cfg.usize("eval.embed_steps")?,
        lr: cfg.f64("eval.embed_lr")?,
        seed: g.seed,
        ..EmbedOptConfig::default()
    };
    let (c0, _) = encode(&pipe.encoder, &prompt.tokens, None)?;
    let (c, rows) = optimize_embedding(&pipe.encoder, &prompt, &images, &pipe.denoiser, &pipe.schedule, &oc, &mask)?;
    let mut ck = Checkpoint::default();
    ck.push("embedding.initial", c0.clone());
    ck.push("embedding.optimized", c.clone());
    ck.save(&run.path("embedding.ckpt"))?;
    write_loss_csv(&run.path("embed_loss.csv"), &rows)?;
    let seeds = cfg.usize("eval.seeds")?;
    let mut csv = String::from("embedding,mean_score,n\n");
    for (tag, emb) in [("initial", &c0), ("optimized", &c)] {
        let mut total = 0.0;
        for k in 0..seeds {
            let img = sample(&pipe.denoiser, emb, image_seed(g.seed, 0, k), &pipe.schedule, &[])?.image;
            total += composition_score(&img, &scene)?.value;
            if k == 0 {
                img.save_png(&run.path(&format!("embed_{tag}.png")))?;
            }
        }
        writeln!(csv, "{tag},{:.6},{seeds}", total / seeds.max(1) as f64)?;
    }
    std::fs::write(run.path("embed_scores.csv"), csv)?;
    Ok(())
}

fn train_adapter(g: &Global, cfg: &RunConfig, models: &Models, data: &Path, kind: ProjectionKind, run: &mut Run) -> Result<()> {
    let pipe = load_pipeline(cfg, models, run)?;
    require(data, "clean corpus")?;
    run.input("data", data)?;
    let s = match kind {
        ProjectionKind::Clp => 0,
        ProjectionKind::Wiclp => cfg.usize("proj.s")?,
    };
    let tc = cfg.projection(g.seed)?;
    let corpus = read_corpus(data)?;
    let (p, rows) = train_projection(kind, s, &corpus.samples, &pipe.encoder, &pipe.denoiser, &pipe.schedule, &tc)?;
    let stem = kind.name();
    projection_checkpoint(&p).save(&run.path(&format!("{stem}.ckpt")))?;
    write_loss_csv(&run.path(&format!("{stem}_loss.csv")), &rows)?;
    Ok(())
}

fn variant_from(args: &VariantArgs, run: &mut Run) -> Result<Variant> {
    if let Some(t) = args.tau {
        if !(0.0..=1.0).contains(&t) {
            return Err(Invalid(format!("--tau {t} outside [0, 1]")).into());
        }
    }
    Ok(match (&args.proj, args.tau, &args.reweight) {
        (Some(p), None, _) => Variant::Projection(load_projection(p, "proj", run)?),
        (Some(p), Some(t), _) => Variant::SwitchOff(load_projection(p, "proj", run)?, t),
        (None, _, Some(r)) => Variant::Reweight(load_reweight(r, run)?),
        (None, _, None) => Variant::Baseline,
    })
}

#[allow(clippy::too_many_arguments)]
fn sample_cmd(
    g: &Global,
    cfg: &RunConfig,
    models: &Models,
    text: &str,
    n: usize,
    args: &VariantArgs,
    record: &[usize],
    run: &mut Run,
) -> Result<()> {
    let prompt = parse_prompt(text)?;
    let pipe = load_pipeline(cfg, models, run)?;
    if let Some(&t) = record.iter().find(|&&t| t == 0 || t > pipe.schedule.t_max()) {
        return Err(Invalid(format!("--record step {t} outside 1..={}", pipe.schedule.t_max())).into());
    }
    let variant = variant_from(args, run)?;
    run.record("prompt", text);
    run.record("variant", variant.tag());
    for k in 0..n {
        let out = pipe.generate(&variant, &prompt, image_seed(g.seed, 0, k), record)?;
        out.image.save_png(&run.path(&format!("sample_{k}.png")))?;
        if !out.maps.is_empty() {
            write_cross_attn_csv(&run.path("cross_attn"), &format!("sample_{k}"), &out.maps)?;
        }
    }
    Ok(())
}

fn eval_cmd(g: &Global, cfg: &RunConfig, models: &Models, args: &VariantArgs, run: &mut Run) -> Result<()> {
    let pipe = load_pipeline(cfg, models, run)?;
    let variant = variant_from(args, run)?;
    let seeds = cfg.usize("eval.seeds")?;
    let scenes = heldout_scenes();
    let eval = pipe.evaluate(&variant, &scenes, seeds, g.seed)?;
    let mut csv = String::from("prompt,seed_index,score\n");
    for (n, s) in eval.scores.iter().enumerate() {
        writeln!(csv, "{},{},{}", scenes[n / seeds], n % seeds, s.value)?;
    }
    std::fs::write(run.path("scores.csv"), csv)?;
    let rows = comparison_table(&pipe, &[(variant.tag(), variant)], &scenes, seeds, g.seed)?;
    write_table_csv(&run.path("eval_table.csv"), &rows)?;
    eprintln!("mean composition score {:.4} over {} images", eval.mean(), eval.scores.len());
    Ok(())
}

fn reference_images(g: &Global, cfg: &RunConfig) -> Result<Vec<Image>> {
    let mut cc = cfg.corpus(g.seed.wrapping_add(1))?;
    cc.n_samples = cfg.usize("eval.reference_size")?;
    cc.p_corrupt = 0.0;
    Ok(gen_corpus(&cc)?.samples.into_iter().map(|s| s.image).collect())
}

fn tradeoff_cmd(g: &Global, cfg: &RunConfig, models: &Models, proj: &Path, taus: &[f64], run: &mut Run) -> Result<()> {
    if taus.is_empty() || taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Invalid("--taus needs fractions in [0, 1]".into()).into());
    }
    let pipe = load_pipeline(cfg, models, run)?;
    let p = load_projection(proj, "proj", run)?;
    let reference = feature_stats(&reference_images(g, cfg)?).map_err(invalid)?;
    let points = tradeoff_curve(&pipe, &p, taus, &heldout_scenes(), cfg.usize("eval.seeds")?, g.seed, &reference)?;
    write_tradeoff_csv(&run.path("tradeoff.csv"), &points)?;
    plot_tradeoff(&run.path("tradeoff.png"), &points)?;
    Ok(())
}

fn table_cmd(
    g: &Global,
    cfg: &RunConfig,
    models: &Models,
    clp: &Path,
    wiclp: &Path,
    reweight: Option<&Path>,
    run: &mut Run,
) -> Result<()> {
    let pipe = load_pipeline(cfg, models, run)?;
    let clp = load_projection(clp, "clp", run)?;
    let wiclp = load_projection(wiclp, "wiclp", run)?;
    let mut variants = vec![Variant::Baseline];
    if let Some(r) = reweight {
        variants.push(Variant::Reweight(load_reweight(r, run)?));
    }
    variants.push(Variant::Projection(clp));
    variants.push(Variant::Projection(wiclp.clone()));
    variants.push(Variant::SwitchOff(wiclp, cfg.f64("eval.tau")?));
    let models: Vec<(String, Variant)> = variants.into_iter().map(|v| (v.tag(), v)).collect();
    let rows = comparison_table(&pipe, &models, &heldout_scenes(), cfg.usize("eval.seeds")?, g.seed)?;
    write_table_csv(&run.path("table.csv"), &rows)?;
    Ok(())
}
