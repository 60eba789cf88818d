use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use mslm::featmap::FeatureGrid;
use mslm::geometry::{Cell, GridSpec};
use mslm::heatmap::{fuse, Heatmap, AUXILIARY_DECAY, PRIMARY_DECAY};
use mslm::instruct::{execute_program, generate_plan, parse_program, SceneWorld, World, MULTIMODAL_PROMPT, SPATIAL_PROMPT};
use mslm::plan::{snap_to_free, write_actions, ActionSpec, Agent, AgentState};
use mslm::posedb::PoseFeatureDb;
use mslm::providers::{Provider, ProviderConfig, SOUND_CLASSES};
use mslm::simharness::{
    build_audio_database, build_feature_map, coverage_trajectory, generate_scene, load_dataset, run_disambiguation, run_embodiment, run_spatial,
    save_dataset, synth_stream, Duplicate, MapProducts, SceneConfig, SizeProfile, SpatialConfig, StreamParams, MIN_INSTANCE_CELLS, OBJECT_CLASSES,
};
use mslm::visloc::{load_reference_db, QueryImage};
use serde::Serialize;

use crate::{Cli, CliError, Command};

/// Extra meters around the camera track when sizing a map.
const MAP_MARGIN: f64 = 2.0;

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::BuildMap { manifest, out, scale, cells, layers, audio_db } => build_map(cli, manifest, out, *scale, *cells, *layers, audio_db.as_deref()),
        Command::Query { map, labels, out } => query(cli, map, labels, out),
        Command::Heatmap { map, object, sound, audio_db, image, ref_db, labels, decay, out } => {
            let sources = HeatSources { object: object.as_deref(), sound: sound.as_deref(), audio_db: audio_db.as_deref(), image: image.as_deref(), ref_db: ref_db.as_deref() };
            heatmap(cli, map, &sources, labels, *decay, out)
        }
        Command::Obstacles { map, exclude, labels, out } => obstacles(cli, map, exclude, labels, out),
        Command::Plan { instruction, prompt, out } => plan(cli, instruction, prompt, out.as_deref()),
        Command::Navigate { map, program, instruction, prompt, start, profile, labels, exclude, audio_db, ref_db, out, trace } => {
            let nav = Navigation { program: program.as_deref(), instruction: instruction.as_deref(), prompt, start: start.as_deref(), profile };
            let sources = HeatSources { object: None, sound: None, audio_db: audio_db.as_deref(), image: None, ref_db: ref_db.as_deref() };
            navigate(cli, map, &nav, &sources, labels, exclude, out, trace.as_deref())
        }
        Command::Bench { suite, seeds, first_seed, out } => bench(cli, suite, *first_seed, *seeds, out.as_deref()),
        Command::GenScene { profile, duplicate, sounds, out } => gen_scene(cli, profile, *duplicate, *sounds, out),
    }
}

fn provider(cli: &Cli) -> Result<Arc<dyn Provider>, CliError> {
    let config = cli.provider.resolve()?;
    let built = config.build().map_err(|e| match &config {
        ProviderConfig::Remote { endpoint, .. } => CliError::Domain(format!("provider at {endpoint}: {e}")),
        _ => e.into(),
    })?;
    Ok(Arc::from(built))
}

fn load_map(path: &Path, provider: &dyn Provider) -> Result<FeatureGrid, CliError> {
    let grid = FeatureGrid::load(path)?;
    if grid.dim() != provider.dim() {
        return Err(CliError::Usage(format!("map has {}-d features but the provider embeds to {}-d", grid.dim(), provider.dim())));
    }
    Ok(grid)
}

fn label_list(labels: &[String]) -> Vec<String> {
    if labels.is_empty() {
        OBJECT_CLASSES.iter().map(|c| c.to_string()).collect()
    } else {
        labels.iter().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect()
    }
}

fn build_map(cli: &Cli, manifest: &Path, out: &Path, scale: f64, cells: Option<u32>, layers: u32, audio_db: Option<&Path>) -> Result<(), CliError> {
    let provider = provider(cli)?;
    let dataset = load_dataset(manifest)?;
    let n = match cells {
        Some(n) => n,
        None => {
            let reach = dataset.frames.iter().map(|f| f.pose.translation()).map(|t| t.x.abs().max(t.z.abs())).fold(0.0, f64::max);
            (2.0 * (reach + MAP_MARGIN) / scale).ceil() as u32
        }
    };
    let spec = GridSpec::new(n, n, layers, scale).map_err(|e| CliError::Usage(e.to_string()))?;
    let grid = build_feature_map(&dataset, provider.as_ref(), spec)?;
    grid.save(out)?;
    println!("map {}x{}x{} at {scale} m, {} occupied voxels -> {}", n, n, layers, grid.len(), out.display());
    if let Some(path) = audio_db {
        let db = build_audio_database(&dataset, provider.as_ref())?.ok_or_else(|| CliError::Domain("dataset has no audio track".into()))?;
        db.save(path)?;
        println!("audio database with {} segments -> {}", db.len(), path.display());
    }
    Ok(())
}

fn query(cli: &Cli, map: &Path, labels: &[String], out: &Path) -> Result<(), CliError> {
    let provider = provider(cli)?;
    let grid = load_map(map, provider.as_ref())?;
    let products = MapProducts::build(&grid, provider.as_ref(), &label_list(labels))?;
    products.segmentation.write_pgm(out)?;
    let top = products.segmentation.top_down_labels();
    for (i, name) in products.labels.labels().iter().enumerate() {
        println!("{name}\t{}", top.iter().filter(|&&l| l == Some(i)).count());
    }
    Ok(())
}

struct HeatSources<'a> {
    object: Option<&'a str>,
    sound: Option<&'a str>,
    audio_db: Option<&'a Path>,
    image: Option<&'a Path>,
    ref_db: Option<&'a Path>,
}

fn world(cli: &Cli, products: &MapProducts, provider: &Arc<dyn Provider>, sources: &HeatSources, exclude: &[&str]) -> Result<SceneWorld, CliError> {
    let mut world = SceneWorld::new(products.spec, products.obstacles(exclude)?).with_segmentation(&products.segmentation, &products.labels, MIN_INSTANCE_CELLS);
    if let Some(path) = sources.audio_db {
        world = world.with_audio(PoseFeatureDb::load(path)?, provider.clone());
    }
    if let Some(path) = sources.ref_db {
        world = world.with_references(load_reference_db(path)?, cli.provider.seed()?);
    }
    Ok(world)
}

fn heatmap(cli: &Cli, map: &Path, sources: &HeatSources, labels: &[String], decay: Option<f64>, out: &Path) -> Result<(), CliError> {
    if sources.object.is_none() && sources.sound.is_none() && sources.image.is_none() {
        return Err(CliError::Usage("give at least one of --object, --sound, --image".into()));
    }
    if sources.sound.is_some() && sources.audio_db.is_none() {
        return Err(CliError::Usage("--sound needs --audio-db".into()));
    }
    if sources.image.is_some() && sources.ref_db.is_none() {
        return Err(CliError::Usage("--image needs --ref-db".into()));
    }
    let provider = provider(cli)?;
    let grid = load_map(map, provider.as_ref())?;
    let products = MapProducts::build(&grid, provider.as_ref(), &label_list(labels))?;
    let world = world(cli, &products, &provider, sources, &[])?;
    let mut eps = std::iter::once(decay.unwrap_or(PRIMARY_DECAY)).chain(std::iter::repeat(AUXILIARY_DECAY));
    let mut maps: Vec<Heatmap> = Vec::new();
    if let Some(name) = sources.object {
        maps.push(world.object_heatmap(name, eps.next().expect("endless"))?);
    }
    if let Some(name) = sources.sound {
        maps.push(world.sound_heatmap(name, eps.next().expect("endless"))?);
    }
    if let Some(path) = sources.image {
        let image = QueryImage::load(path)?;
        maps.push(world.image_heatmap(&image, eps.next().expect("endless"))?);
    }
    let fused = if maps.len() == 1 { maps.remove(0) } else { fuse(&maps.iter().collect::<Vec<_>>())? };
    fused.write_pgm(out)?;
    let raw = out.with_extension("raw");
    fused.write_raw(&raw)?;
    match fused.argmax() {
        Some(p) => println!("peak {:.4} at ({}, {}, {}) -> {}, {}", p.score, p.voxel.x, p.voxel.y, p.voxel.z, out.display(), raw.display()),
        None => println!("empty heatmap -> {}, {}", out.display(), raw.display()),
    }
    Ok(())
}

fn obstacles(cli: &Cli, map: &Path, exclude: &[String], labels: &[String], out: &Path) -> Result<(), CliError> {
    let provider = provider(cli)?;
    let grid = load_map(map, provider.as_ref())?;
    let labels = label_list(labels);
    if let Some(bad) = exclude.iter().find(|e| !labels.contains(e)) {
        return Err(CliError::Usage(format!("cannot exclude {bad:?}: not among the labels")));
    }
    let products = MapProducts::build(&grid, provider.as_ref(), &labels)?;
    let excluded: Vec<&str> = exclude.iter().map(String::as_str).collect();
    let obstacles = products.obstacles(&excluded)?;
    obstacles.write_pgm(out)?;
    println!("{} occupied cells -> {}", obstacles.occupied_count(), out.display());
    Ok(())
}

fn prompt_context(name: &str) -> Result<&'static str, CliError> {
    match name {
        "multimodal" => Ok(MULTIMODAL_PROMPT),
        "spatial" => Ok(SPATIAL_PROMPT),
        other => Err(CliError::Usage(format!("unknown prompt {other:?}; expected multimodal or spatial"))),
    }
}

fn plan(cli: &Cli, instruction: &str, prompt: &str, out: Option<&Path>) -> Result<(), CliError> {
    let context = prompt_context(prompt)?;
    let provider = provider(cli)?;
    let (code, source) = generate_plan(instruction, context, Some(provider.as_ref()))?;
    eprintln!("plan source: {source:?}");
    match out {
        Some(path) => fs::write(path, &code)?,
        None => print!("{code}"),
    }
    Ok(())
}

struct Navigation<'a> {
    program: Option<&'a Path>,
    instruction: Option<&'a str>,
    prompt: &'a str,
    start: Option<&'a str>,
    profile: &'a str,
}

fn parse_start(text: &str) -> Result<AgentState, CliError> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad --start {text:?}; expected x,y,heading")))?;
    match v[..] {
        [x, y, h] => Ok(AgentState::new(x, y, h)),
        [x, y] => Ok(AgentState::new(x, y, 0.0)),
        _ => Err(CliError::Usage(format!("bad --start {text:?}; expected x,y,heading"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn navigate(
    cli: &Cli,
    map: &Path,
    nav: &Navigation,
    sources: &HeatSources,
    labels: &[String],
    exclude: &[String],
    out: &Path,
    trace_path: Option<&Path>,
) -> Result<(), CliError> {
    let actions = ActionSpec::by_name(nav.profile).ok_or_else(|| CliError::Usage(format!("unknown profile {:?}", nav.profile)))?;
    let provider = provider(cli)?;
    let code = match (nav.program, nav.instruction) {
        (Some(path), _) => fs::read_to_string(path)?,
        (None, Some(text)) => generate_plan(text, prompt_context(nav.prompt)?, Some(provider.as_ref()))?.0,
        (None, None) => return Err(CliError::Usage("give --program or --instruction".into())),
    };
    let program = parse_program(&code)?;
    let grid = load_map(map, provider.as_ref())?;
    let products = MapProducts::build(&grid, provider.as_ref(), &label_list(labels))?;
    let excluded: Vec<&str> = exclude.iter().map(String::as_str).collect();
    let mut world = world(cli, &products, &provider, sources, &excluded)?;
    if let Some(dir) = nav.program.and_then(Path::parent) {
        world.image_root = dir.to_path_buf();
    }
    let start = match nav.start {
        Some(s) => parse_start(s)?,
        None => {
            let spec = world.spec;
            let centre = Cell::new(spec.h / 2, spec.w / 2);
            let c = snap_to_free(&world.obstacles, centre, spec.h.max(spec.w) as f64).ok_or_else(|| CliError::Domain("map has no free cell".into()))?;
            AgentState::at_cell(c, 0.0)
        }
    };
    let mut agent = Agent::new(start, actions, world.spec.scale);
    let trace = execute_program(&program, &world, &mut agent);
    write_actions(BufWriter::new(File::create(out)?), &agent.log)?;
    match trace_path {
        Some(p) => fs::write(p, trace.to_string())?,
        None => print!("{trace}"),
    }
    let failed = trace.subgoals.iter().filter(|s| !s.completed()).count();
    if failed > 0 || !trace.errors.is_empty() {
        return Err(CliError::Domain(format!("{failed} of {} subgoals failed, {} other errors", trace.subgoals.len(), trace.errors.len())));
    }
    Ok(())
}

fn write_csv<T: Serialize>(rows: &[T], out: Option<&Path>) -> Result<(), CliError> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn bench(cli: &Cli, suite: &str, first: u64, count: u64, out: Option<&Path>) -> Result<(), CliError> {
    let seeds: Vec<u64> = (first..first + count).collect();
    let sigma = cli.provider.sigma.unwrap_or(0.0);
    match suite {
        "spatial" => {
            let report = run_spatial(&SpatialConfig::new(seeds, sigma))?;
            eprintln!("spatial: SR {:.2}% SPL {:.4} over {} subgoals", report.overall.sr, report.overall.spl, report.overall.subgoals);
            write_csv(&report.rows, out)
        }
        "disambiguation" => {
            let report = run_disambiguation(&seeds, sigma)?;
            eprintln!("recall@1 <0.5m: primary {:.1}% fused {:.1}%", report.primary.recall[0], report.fused.recall[0]);
            write_csv(&report.rows, out)
        }
        "embodiment" => {
            let rows = run_embodiment(&seeds)?;
            eprintln!("strictly shorter without the table: {} of {}", rows.iter().filter(|r| r.improved).count(), rows.len());
            write_csv(&rows, out)
        }
        other => Err(CliError::Usage(format!("unknown suite {other:?}; expected spatial, disambiguation or embodiment"))),
    }
}

fn gen_scene(cli: &Cli, profile: &str, duplicate: Option<usize>, sounds: usize, out: &Path) -> Result<(), CliError> {
    let seed = cli.provider.seed()?;
    let profile = SizeProfile::by_name(profile).ok_or_else(|| CliError::Usage(format!("unknown profile {profile:?}")))?;
    let duplicate = duplicate.map(|count| Duplicate {
        count,
        min_separation: 2.0,
        cue: Some(SOUND_CLASSES[seed as usize % SOUND_CLASSES.len()].to_string()),
    });
    let scene = generate_scene(seed, &SceneConfig { profile, duplicate, sounds })?;
    fs::create_dir_all(out)?;
    fs::write(out.join("scene.json"), serde_json::to_string_pretty(&scene)?)?;
    let params = StreamParams::default();
    let dataset = synth_stream(&scene, &coverage_trajectory(&scene, &params), &params)?;
    let manifest = save_dataset(&dataset, out)?;
    println!("{} objects, {} sounds, {} frames -> {}", scene.objects.len(), scene.sounds.len(), dataset.frames.len(), manifest.display());
    Ok(())
}
