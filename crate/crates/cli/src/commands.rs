//! Subcommand implementations. Each one reads artifacts, runs a
//! pipeline stage, writes artifacts, and prints a key=value summary to
//! standard output; progress notes go to standard error.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Display;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use rvad_core::evaluation::{MetricReport, PredictionSet, frame_auc, rbdc_curve, tbdc_curve};
use rvad_core::gmm::{CovarianceMode, EmConfig, select_components_bic};
use rvad_core::heatmap::ActivityHeatmap;
use rvad_core::io::{
    FrameScoreRow, RunConfig, expand_tracklet_scores, format_real, frame_score_rows,
    observations_from_records, read_annotations, read_frame_scores, read_model_set,
    read_region_map, read_tracklet_records, read_tracklet_scores, record_from_observation,
    window_tracklets, write_annotations, write_flo, write_frame_scores, write_json,
    write_model_set, write_region_map, write_tracklet_records, write_tracklet_scores,
};
use rvad_core::normalcy::{
    RegionModelKind, TrainConfig, Tracklet, group_features_by_region, prototypical_events,
    train_regional_models,
};
use rvad_core::region::{DiscoverOptions, Palette, RegionMap, discover_regions, render_region_map};
use rvad_core::scoring::{DEFAULT_EMPTY_FLOOR, frame_scores, score_tracklets, smooth};
use rvad_core::synth::{
    AnomalySpec, SceneLayout, ToyRuleSet, ToySample, emit_flow_rasters, generate_toy,
    simulate_scene,
};
use rvad_core::types::{Category, TrackletObservation};
use rvad_core::{Error, Result};

fn emit(key: &str, value: impl Display) {
    println!("{key}={value}");
}

pub fn sidecar_of(pgm: &Path) -> PathBuf {
    pgm.with_extension("json")
}

fn write_ppm(path: &Path, height: usize, width: usize, rgb: &[u8]) -> Result<()> {
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(rgb);
    fs::write(path, bytes)?;
    Ok(())
}

/// regions.pgm + regions.json + a color render for eyeballing.
fn write_map_artifacts(out: &Path, map: &RegionMap) -> Result<()> {
    let palette = Palette::generate(map.k());
    write_region_map(&out.join("regions.pgm"), &out.join("regions.json"), map, &palette)?;
    let rgb = render_region_map(map, &palette);
    write_ppm(&out.join("regions.ppm"), map.height(), map.width(), &rgb)
}

/// Read records and deposit every observation into a fresh heatmap.
fn load_activity(
    config: &RunConfig,
    tracklets: &Path,
) -> Result<(ActivityHeatmap, Vec<TrackletObservation>)> {
    let records = read_tracklet_records(tracklets)?;
    let observations = observations_from_records(&records)?;
    let mut heatmap = ActivityHeatmap::new(config.height, config.width, config.kernel)?;
    for obs in &observations {
        heatmap.accumulate(obs)?;
    }
    eprintln!(
        "accumulated {} observations into a {}x{} heatmap",
        observations.len(),
        config.height,
        config.width
    );
    Ok((heatmap, observations))
}

fn discover_options(config: &RunConfig) -> DiscoverOptions {
    DiscoverOptions {
        method: config.method,
        spatial_affinity: config.spatial_affinity,
        subsample: config.subsample,
        seed: config.seed,
        min_mass: config.min_mass,
    }
}

fn train_config(config: &RunConfig) -> TrainConfig {
    TrainConfig {
        k_max: config.k_max,
        min_samples: config.min_samples,
        em: EmConfig::with_seed(config.seed),
    }
}

pub fn simulate(config: &RunConfig, out: &Path) -> Result<()> {
    let layout = SceneLayout::four_lane(config.height, config.width)?;
    let spec = AnomalySpec {
        rate: config.anomaly_rate,
        kinds: config.anomaly_kinds.clone(),
    };
    eprintln!(
        "simulating {} frames over {} zones (seed {})",
        config.n_frames,
        layout.zones.len(),
        config.seed
    );
    let output = simulate_scene(&layout, config.n_frames, &spec, config.seed)?;

    let records: Vec<_> = output.observations.iter().map(record_from_observation).collect();
    write_tracklet_records(&out.join("tracklets.tsv"), &records)?;
    write_annotations(&out.join("annotations.tsv"), &output.annotations)?;
    let palette = Palette::generate(output.raster.k());
    write_region_map(
        &out.join("zones.pgm"),
        &out.join("zones.json"),
        &output.raster,
        &palette,
    )?;
    let flows = emit_flow_rasters(&output, &[0])?;
    write_flo(&out.join("flow_00000.flo"), &flows[0])?;

    let tracks: BTreeSet<u64> = output.observations.iter().map(|o| o.track_id).collect();
    emit("video_id", &output.video_id);
    emit("n_frames", output.n_frames);
    emit("zones", output.raster.k());
    emit("tracks", tracks.len());
    emit("observations", output.observations.len());
    emit("anomalous_tracks", output.anomalous_tracks.len());
    emit("annotations", output.annotations.len());
    Ok(())
}

#[derive(Serialize)]
struct ToyReport {
    seed: u64,
    n_train: usize,
    n_test: usize,
    test_anomalies: usize,
    components_by_region: Vec<usize>,
    auc: f64,
}

/// Object + speed one-hots; the region is the model index, not a
/// feature.
fn toy_feature(sample: &ToySample) -> [f64; 6] {
    let mut v = [0.0; 6];
    v[sample.object] = 1.0;
    v[3 + sample.speed] = 1.0;
    v
}

pub fn toy(config: &RunConfig, out: &Path) -> Result<()> {
    let rules = ToyRuleSet::street();
    let n_regions = rules.region_marginal.len();
    let data = generate_toy(&rules, config.n_train, config.n_test, config.seed)?;
    eprintln!(
        "toy data: {} train / {} test samples, {} regions",
        data.train.len(),
        data.test.len(),
        n_regions
    );

    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); n_regions];
    for sample in &data.train {
        rows[sample.region].extend(toy_feature(sample));
    }
    let mut models = Vec::with_capacity(n_regions);
    for (region, flat) in rows.into_iter().enumerate() {
        let n = flat.len() / 6;
        if n == 0 {
            return Err(Error::invalid_argument(format!(
                "region {region} drew no training samples; raise n_train"
            )));
        }
        let samples = Array2::from_shape_vec((n, 6), flat)
            .map_err(|e| Error::Internal(e.to_string()))?;
        let em = EmConfig::with_seed(config.seed.wrapping_add(region as u64 + 1));
        let model = select_components_bic(&samples, config.k_max, CovarianceMode::Full, &em)?;
        eprintln!(
            "region {region}: {} samples -> {} components",
            n,
            model.components().len()
        );
        models.push(model);
    }

    let mut nll = Vec::with_capacity(data.test.len());
    let mut labels = Vec::with_capacity(data.test.len());
    for sample in &data.test {
        let x = ndarray::Array1::from(toy_feature(sample).to_vec());
        nll.push(-models[sample.region].log_pdf(&x.view())?);
        labels.push(sample.anomalous);
    }
    let auc = frame_auc(&nll, &labels)?;

    let report = ToyReport {
        seed: config.seed,
        n_train: data.train.len(),
        n_test: data.test.len(),
        test_anomalies: labels.iter().filter(|&&l| l).count(),
        components_by_region: models.iter().map(|m| m.components().len()).collect(),
        auc,
    };
    write_json(&out.join("report.json"), &report)?;

    emit("auc", format_real(auc));
    emit("test_anomalies", report.test_anomalies);
    for (region, m) in models.iter().enumerate() {
        emit(&format!("components_region_{region}"), m.components().len());
    }
    Ok(())
}

pub fn discover(config: &RunConfig, out: &Path, tracklets: &Path) -> Result<()> {
    let k = config.k.ok_or_else(|| {
        Error::invalid_argument("discover needs a region count; set --k or the k config key")
    })?;
    let (heatmap, _) = load_activity(config, tracklets)?;
    let map = discover_regions(&heatmap, k, &discover_options(config))?;
    write_map_artifacts(out, &map)?;

    emit("k", map.k());
    emit("map_hash", map.content_hash());
    match map.provenance().mu_kl {
        Some(mu) => emit("mu_kl", format_real(mu)),
        None => emit("mu_kl", ""),
    }
    Ok(())
}

#[derive(Serialize)]
struct SelectKRow {
    k: usize,
    /// Absent when the candidate failed to produce a usable model set.
    mu_kl: Option<f64>,
}

#[derive(Serialize)]
struct SelectKDoc {
    best_k: usize,
    table: Vec<SelectKRow>,
}

pub fn select_k(config: &RunConfig, out: &Path, tracklets: &Path) -> Result<()> {
    if config.k_candidates.is_empty() {
        return Err(Error::invalid_argument(
            "select-k needs candidates; set --k_candidates",
        ));
    }
    let (heatmap, observations) = load_activity(config, tracklets)?;
    let windows = window_tracklets(&observations, config.t_w)?;
    let report = rvad_core::region::select_k(
        &heatmap,
        &windows,
        &config.k_candidates,
        &discover_options(config),
        &train_config(config),
    )?;

    let doc = SelectKDoc {
        best_k: report.best_k,
        table: report
            .table
            .iter()
            .map(|&(k, mu)| SelectKRow {
                k,
                mu_kl: mu.is_finite().then_some(mu),
            })
            .collect(),
    };
    write_json(&out.join("select_k.json"), &doc)?;

    // Materialize the winning decomposition alongside the table.
    let map = discover_regions(&heatmap, report.best_k, &discover_options(config))?;
    write_map_artifacts(out, &map)?;

    emit("best_k", report.best_k);
    for row in &doc.table {
        match row.mu_kl {
            Some(mu) => emit(&format!("mu_kl_k{}", row.k), format_real(mu)),
            None => emit(&format!("mu_kl_k{}", row.k), "failed"),
        }
    }
    emit("map_hash", map.content_hash());
    Ok(())
}

pub fn train(config: &RunConfig, out: &Path, tracklets: &Path, regions: &Path) -> Result<()> {
    let records = read_tracklet_records(tracklets)?;
    let observations = observations_from_records(&records)?;
    let windows = window_tracklets(&observations, config.t_w)?;
    let (map, _) = read_region_map(regions, &sidecar_of(regions))?;
    eprintln!(
        "training on {} windows across {} regions",
        windows.len(),
        map.k()
    );
    let features = group_features_by_region(&windows, &map)?;
    let models = train_regional_models(&map, &features, &train_config(config))?;
    write_model_set(&out.join("models.json"), &models)?;

    let count = |kind: RegionModelKind| models.regions.iter().filter(|r| r.kind == kind).count();
    emit("regions", models.k());
    emit("mixture_regions", count(RegionModelKind::BicMixture));
    emit("gaussian_regions", count(RegionModelKind::SingleGaussian));
    emit("pooled_regions", count(RegionModelKind::PooledGlobal));
    emit("map_hash", &models.region_map_hash);
    Ok(())
}

pub fn score(
    config: &RunConfig,
    out: &Path,
    tracklets: &Path,
    regions: &Path,
    models_path: &Path,
) -> Result<()> {
    let records = read_tracklet_records(tracklets)?;
    let observations = observations_from_records(&records)?;
    let windows = window_tracklets(&observations, config.t_w)?;
    let (map, _) = read_region_map(regions, &sidecar_of(regions))?;
    let models = read_model_set(models_path)?;
    models.validate_against(&map)?;

    let mut n_frames: BTreeMap<String, u64> = BTreeMap::new();
    for obs in &observations {
        let n = n_frames.entry(obs.video_id.clone()).or_insert(0);
        *n = (*n).max(obs.frame + 1);
    }
    let mut by_video: BTreeMap<String, Vec<Tracklet>> = BTreeMap::new();
    for window in windows {
        by_video.entry(window.video_id.clone()).or_default().push(window);
    }

    let mut frame_rows = Vec::new();
    let mut track_rows = Vec::new();
    let mut nll_sum = 0.0;
    let mut nll_count = 0usize;
    for (video, video_windows) in &by_video {
        let scores = score_tracklets(&models, &map, video_windows)?;
        let raw = frame_scores(&scores, video, n_frames[video] as usize, DEFAULT_EMPTY_FLOOR)?;
        let smoothed = smooth(&raw, config.smoothing_sigma)?;
        frame_rows.extend(frame_score_rows(&raw, &smoothed)?);
        track_rows.extend(expand_tracklet_scores(&scores));
        nll_sum += scores.iter().map(|s| s.nll).sum::<f64>();
        nll_count += scores.len();
        eprintln!("scored {} windows of {video}", scores.len());
    }
    write_frame_scores(&out.join("frame_scores.tsv"), &frame_rows)?;
    write_tracklet_scores(&out.join("tracklet_scores.tsv"), &track_rows)?;

    emit("videos", by_video.len());
    emit("tracklets", nll_count);
    emit("frames", frame_rows.len());
    if nll_count > 0 {
        emit("mean_nll", format_real(nll_sum / nll_count as f64));
    }
    Ok(())
}

pub fn evaluate(
    config: &RunConfig,
    out: &Path,
    frame_path: &Path,
    tracklet_path: &Path,
    annotation_path: &Path,
) -> Result<()> {
    let frames = read_frame_scores(frame_path)?;
    let boxes = read_tracklet_scores(tracklet_path)?;
    let annotations = read_annotations(annotation_path)?;

    let anomalous: HashSet<(&str, u64)> = annotations
        .iter()
        .map(|g| (g.video_id.as_str(), g.frame))
        .collect();
    let scores: Vec<f64> = frames.iter().map(|r| r.smoothed).collect();
    let labels: Vec<bool> = frames
        .iter()
        .map(|r| anomalous.contains(&(r.video_id.as_str(), r.frame)))
        .collect();
    let auc = frame_auc(&scores, &labels)?;

    let mut predictions = PredictionSet::new();
    let mut counts: Vec<(&str, u64)> = Vec::new();
    for row in &frames {
        match counts.last_mut() {
            Some((video, n)) if *video == row.video_id => *n += 1,
            _ => counts.push((&row.video_id, 1)),
        }
    }
    for (video, n) in counts {
        predictions.add_video(video, n)?;
    }
    for row in &boxes {
        predictions.add_box(&row.video_id, row.frame, row.bbox, row.nll)?;
    }
    let region_curve = rbdc_curve(&predictions, &annotations, config.iou_threshold)?;
    let track_curve = tbdc_curve(
        &predictions,
        &annotations,
        config.iou_threshold,
        config.track_fraction,
    )?;

    let report = MetricReport {
        frame_auc: auc,
        rbdc: region_curve.area,
        tbdc: track_curve.area,
        rbdc_curve: region_curve.points,
        tbdc_curve: track_curve.points,
    };
    write_json(&out.join("metrics.json"), &report)?;

    emit("frame_auc", format_real(report.frame_auc));
    emit("rbdc", format_real(report.rbdc));
    emit("tbdc", format_real(report.tbdc));
    Ok(())
}

fn kind_name(kind: RegionModelKind) -> &'static str {
    match kind {
        RegionModelKind::BicMixture => "bic-mixture",
        RegionModelKind::SingleGaussian => "single-gaussian",
        RegionModelKind::PooledGlobal => "pooled-global",
    }
}

pub fn explain(
    config: &RunConfig,
    out: &Path,
    tracklets: &Path,
    regions: &Path,
    models_path: &Path,
) -> Result<()> {
    let records = read_tracklet_records(tracklets)?;
    let observations = observations_from_records(&records)?;
    let windows = window_tracklets(&observations, config.t_w)?;
    let (map, _) = read_region_map(regions, &sidecar_of(regions))?;
    let models = read_model_set(models_path)?;
    models.validate_against(&map)?;
    let features = group_features_by_region(&windows, &map)?;

    let mut text = String::new();
    let mut total = 0usize;
    for label in 0..map.k() {
        let region = &models.regions[label];
        writeln!(
            text,
            "region {label}: kind={} training_samples={}",
            kind_name(region.kind),
            region.training_samples
        )
        .expect("string write");
        if region.kind != RegionModelKind::BicMixture {
            writeln!(text, "  scored by the {} model", kind_name(region.kind))
                .expect("string write");
            continue;
        }
        for p in prototypical_events(&models, label as u32, &features[label])? {
            let category = Category::from_index(argmax(&p.mean.as_slice().unwrap()[..4]))
                .ok_or_else(|| Error::Internal("prototype mean has no category block".into()))?;
            writeln!(
                text,
                "  component={} weight={:.4} category={} orientation={:.4} speed={:.4} \
                 nearest_sample={} distance={:.4}",
                p.component,
                p.weight,
                category.as_str(),
                p.mean[4],
                p.mean[5],
                p.nearest,
                p.distance
            )
            .expect("string write");
            total += 1;
        }
    }
    fs::write(out.join("explain.txt"), text)?;

    emit("regions", map.k());
    emit("prototypes", total);
    Ok(())
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

const PLOT_COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// One polyline per video over the smoothed scores, jointly normalized.
fn scores_svg(rows: &[FrameScoreRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 240.0;
    const MARGIN: f64 = 20.0;
    let mut videos: Vec<(&str, Vec<&FrameScoreRow>)> = Vec::new();
    for row in rows {
        match videos.last_mut() {
            Some((video, list)) if *video == row.video_id => list.push(row),
            _ => videos.push((&row.video_id, vec![row])),
        }
    }
    let lo = rows.iter().map(|r| r.smoothed).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.smoothed).fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let longest = videos.iter().map(|(_, l)| l.len()).max().unwrap_or(1).max(2) as f64;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    );
    for (i, (video, list)) in videos.iter().enumerate() {
        let color = PLOT_COLORS[i % PLOT_COLORS.len()];
        let mut points = String::new();
        for (f, row) in list.iter().enumerate() {
            let x = MARGIN + (W - 2.0 * MARGIN) * f as f64 / (longest - 1.0);
            let y = H - MARGIN - (H - 2.0 * MARGIN) * (row.smoothed - lo) / span;
            write!(points, "{x:.2},{y:.2} ").expect("string write");
        }
        writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" points=\"{}\"/>",
            points.trim_end()
        )
        .expect("string write");
        writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" fill=\"{color}\">{video}</text>",
            MARGIN,
            12.0 + 12.0 * i as f64
        )
        .expect("string write");
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn render(
    _config: &RunConfig,
    out: &Path,
    regions: &Path,
    frame_scores_path: Option<&Path>,
) -> Result<()> {
    let (map, palette) = read_region_map(regions, &sidecar_of(regions))?;
    let rgb = render_region_map(&map, &palette);
    let ppm = out.join("regions.ppm");
    write_ppm(&ppm, map.height(), map.width(), &rgb)?;
    emit("regions_ppm", ppm.display());

    if let Some(path) = frame_scores_path {
        let rows = read_frame_scores(path)?;
        if rows.is_empty() {
            return Err(Error::invalid_argument("frame score table is empty"));
        }
        let svg_path = out.join("scores.svg");
        fs::write(&svg_path, scores_svg(&rows))?;
        emit("scores_svg", svg_path.display());
    }
    Ok(())
}
