//! Acceptance gate. Prints one `PASS`/`FAIL` line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Display;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use tower::ServiceExt;

use surgq_core::corpus::{generate_synthetic, write_synthetic_project, Project, SyntheticCorpus, SyntheticSpec};
use surgq_core::fusion::{fuse, fuse_batch};
use surgq_core::geometry::{extract_polygons, rasterize, ExtractConfig, Point};
use surgq_core::keyframes::{banded_similarity_signal, keyframes, FeatureSeries, KeyframeConfig};
use surgq_core::metrics::{dice, dice_report};
use surgq_core::quiz::{
    grade_mcq, grade_path, quiz_from_json, quiz_to_json, Anchor, ExtractAnswer, ExtractQuestion, HighlightStyle,
    McqOption, McqQuestion, PathQuestion, Question, Quiz, RegionFeedback, RichText, QUIZ_SCHEMA,
};
use surgq_core::search::{
    build_index, evaluate_a_at_n, parse_judgments, search, FrameIndex, Reference, SearchParams, DEFAULT_GRID,
};
use surgq_core::{ClassId, ClassMap, Exec, FrameRef, FusedScene, SectionMask};
use surgq_service::api::{grade_answer, Answer, GradeRequest, SearchRequest, SearchResponse};
use surgq_service::{router, AppState};

type Outcome = Result<String, String>;

fn s<E: Display>(e: E) -> String {
    e.to_string()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Gate {
    failed: Vec<String>,
    total: usize,
}

impl Gate {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let r = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|m| m.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        self.total += 1;
        match r {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.2}s]"),
            Err(detail) => {
                println!("FAIL {name}: {detail} [{secs:.2}s]");
                self.failed.push(name.to_string());
            }
        }
    }
}

fn main() {
    let mut gate = Gate {
        failed: Vec::new(),
        total: 0,
    };

    let gen_start = Instant::now();
    let corpus = generate_synthetic(&SyntheticSpec::new(200, 0.3, 42)).expect("seed-42 corpus");
    let gen_time = gen_start.elapsed();
    let mut fused: Vec<FusedScene> = Vec::new();

    gate.run("fusion_repair", || fusion_repair(&corpus, gen_time, &mut fused));
    gate.run("fusion_monotonicity", || fusion_monotonicity(&corpus, &fused));
    gate.run("fusion_invariants", fusion_invariants);
    gate.run("dice_fixtures", dice_fixtures);
    gate.run("search_oracle", search_oracle);
    gate.run("self_retrieval", || self_retrieval(&corpus, &fused));
    gate.run("a_at_n", a_at_n);
    gate.run("keyframe_blocks", keyframe_blocks);
    gate.run("geometry_round_trip", || geometry_round_trip(&fused));
    gate.run("quiz_round_trip", quiz_round_trip);
    gate.run("service_contract", service_contract);

    println!(
        "acceptance: {} of {} criteria passed",
        gate.total - gate.failed.len(),
        gate.total
    );
    if !gate.failed.is_empty() {
        println!("failed: {}", gate.failed.join(", "));
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- fusion

fn fusion_repair(corpus: &SyntheticCorpus, gen_time: Duration, out: &mut Vec<FusedScene>) -> Outcome {
    let spec = &corpus.spec;
    ensure((spec.width, spec.height) == (854, 480), || "corpus is not 480x854".into())?;
    let pairs: Vec<(&ClassMap, &SectionMask)> =
        corpus.frames.iter().map(|f| (&f.noisy, &f.truth_sections)).collect();
    let start = Instant::now();
    let results = fuse_batch(Exec::default(), &pairs);
    let fuse_time = start.elapsed();
    let mut exact = 0;
    for (r, f) in results.into_iter().zip(&corpus.frames) {
        let scene = r.map_err(s)?;
        if scene.class_map() == &f.truth {
            exact += 1;
        }
        out.push(scene);
    }
    let flipped: u64 = corpus.frames.iter().flat_map(|f| &f.flips).sum();
    let total = gen_time + fuse_time;
    let detail = format!(
        "{exact}/200 bit-exact, {flipped} noisy pixels, fuse {:.2}s, generate+fuse {:.2}s (limit 10s)",
        fuse_time.as_secs_f64(),
        total.as_secs_f64()
    );
    ensure(exact == 200 && total < Duration::from_secs(10), || detail.clone())?;
    Ok(detail)
}

fn fusion_monotonicity(corpus: &SyntheticCorpus, fused: &[FusedScene]) -> Outcome {
    ensure(fused.len() == corpus.frames.len(), || "fusion_repair produced no scenes".into())?;
    let mut strict = 0;
    let mut worst_gain = f64::INFINITY;
    let (mut sum_noisy, mut sum_fused) = (0.0, 0.0);
    for (scene, f) in fused.iter().zip(&corpus.frames) {
        let truth = std::slice::from_ref(&f.truth);
        let d_noisy = dice_report(std::slice::from_ref(&f.noisy), truth).map_err(s)?.mean;
        let d_fused = dice_report(std::slice::from_ref(scene.class_map()), truth).map_err(s)?.mean;
        ensure(d_fused >= d_noisy, || format!("{}: fused {d_fused} < noisy {d_noisy}", f.frame.key()))?;
        if d_fused > d_noisy {
            strict += 1;
        }
        worst_gain = worst_gain.min(d_fused - d_noisy);
        sum_noisy += d_noisy;
        sum_fused += d_fused;
    }
    let n = fused.len() as f64;
    let detail = format!(
        "mean dice noisy {:.4} -> fused {:.4}, strict on {strict}/{}, smallest gain {worst_gain:.4}",
        sum_noisy / n,
        sum_fused / n,
        fused.len()
    );
    ensure(strict == fused.len(), || detail.clone())?;
    Ok(detail)
}

/// Plurality class of each input section, lowest id on ties.
fn plurality(map: &ClassMap, mask: &SectionMask) -> Vec<ClassId> {
    let mut tally = vec![[0u64; 9]; mask.n_sections() as usize];
    for (c, &sid) in map.as_raw().iter().zip(mask.as_raw()) {
        tally[usize::from(sid)][usize::from(*c)] += 1;
    }
    tally
        .iter()
        .map(|t| {
            let best = (0..9).max_by_key(|&c| (t[c], std::cmp::Reverse(c))).unwrap();
            ClassId::new(best as u8).unwrap()
        })
        .collect()
}

fn random_scene(rng: &mut ChaCha8Rng) -> (ClassMap, SectionMask) {
    let w = rng.random_range(1..=48u32);
    let h = rng.random_range(1..=48u32);
    let n_seeds = rng.random_range(1..=24usize);
    let seeds: Vec<(f64, f64)> = (0..n_seeds)
        .map(|_| (rng.random_range(0.0..f64::from(w)), rng.random_range(0.0..f64::from(h))))
        .collect();
    let mut raw = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            let nearest = (0..n_seeds)
                .min_by(|&a, &b| {
                    let da = (seeds[a].0 - px).powi(2) + (seeds[a].1 - py).powi(2);
                    let db = (seeds[b].0 - px).powi(2) + (seeds[b].1 - py).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            raw.push(nearest);
        }
    }
    let mask = SectionMask::renumbered(w, h, &raw).unwrap();
    // Few classes make adjacent same-class sections, and so merges, common.
    let palette = rng.random_range(1..=9u8);
    let base: Vec<u8> = (0..n_seeds).map(|_| rng.random_range(0..palette)).collect();
    let flip = rng.random_range(0.0..0.7);
    let labels = raw
        .iter()
        .map(|&sd| {
            if rng.random_bool(flip) {
                rng.random_range(0..9u8)
            } else {
                base[sd]
            }
        })
        .collect();
    (ClassMap::from_raw(w, h, labels).unwrap(), mask)
}

fn check_invariants(map: &ClassMap, mask: &SectionMask, scene: &FusedScene) -> Result<(), String> {
    let (w, h) = (map.width() as usize, map.height() as usize);
    let out_map = scene.class_map().as_raw();
    let out_ids = scene.section_mask().as_raw();
    ensure(scene.class_map().dims() == map.dims(), || "dims changed".into())?;

    // Pixel conservation.
    let counted: u64 = scene.sections().iter().map(|r| r.pixel_count).sum();
    ensure(counted == (w * h) as u64, || format!("sections cover {counted} of {} pixels", w * h))?;
    let mut sizes = vec![0u64; scene.sections().len()];
    for &id in out_ids {
        sizes[usize::from(id)] += 1;
    }
    for r in scene.sections() {
        ensure(sizes[r.id as usize] == r.pixel_count, || format!("section {} size mismatch", r.id))?;
    }

    // Purity: one class per output section, matching its record.
    for (i, &id) in out_ids.iter().enumerate() {
        let rec = &scene.sections()[usize::from(id)];
        ensure(out_map[i] == rec.class.get(), || format!("pixel {i} impure in section {id}"))?;
    }

    // Each input section takes its plurality class and lands in one output section.
    let votes = plurality(map, mask);
    let mut landed: HashMap<u16, u16> = HashMap::new();
    for (i, &sid) in mask.as_raw().iter().enumerate() {
        ensure(out_map[i] == votes[usize::from(sid)].get(), || format!("pixel {i} not plurality class"))?;
        let prev = *landed.entry(sid).or_insert(out_ids[i]);
        ensure(prev == out_ids[i], || format!("input section {sid} split"))?;
    }

    // Fully merged: 4-neighbours in different sections differ in class.
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for j in [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)].into_iter().flatten() {
                if out_ids[i] != out_ids[j] {
                    ensure(out_map[i] != out_map[j], || format!("same-class neighbours {i},{j} unmerged"))?;
                }
            }
        }
    }

    // Idempotence.
    let again = fuse(scene.class_map(), scene.section_mask()).map_err(s)?;
    ensure(
        again.class_map() == scene.class_map() && again.section_mask() == scene.section_mask(),
        || "second fusion changed the scene".into(),
    )
}

fn fusion_invariants() -> Outcome {
    const SCENES: usize = 1200;
    let mut rng = ChaCha8Rng::seed_from_u64(0xf0_5e);
    let mut merged = 0usize;
    for n in 0..SCENES {
        let (map, mask) = random_scene(&mut rng);
        let scene = fuse(&map, &mask).map_err(s)?;
        if (scene.sections().len() as u32) < mask.n_sections() {
            merged += 1;
        }
        check_invariants(&map, &mask, &scene).map_err(|e| format!("scene {n}: {e}"))?;
    }
    ensure(merged > SCENES / 10, || format!("only {merged} scenes exercised merging"))?;
    Ok(format!("{SCENES} scenes, {merged} with merges: purity, plurality, merge, idempotence, conservation hold"))
}

// --------------------------------------------------------------- metrics

fn cm(w: u32, h: u32, raw: &[u8]) -> ClassMap {
    ClassMap::from_raw(w, h, raw.to_vec()).unwrap()
}

/// Per-class F1 from confusion counts; `None` when the class appears nowhere.
fn f1(pred: &[u8], truth: &[u8], class: u8) -> Option<f64> {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == class, t == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return None;
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    Some(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

fn dice_fixtures() -> Outcome {
    let fat = ClassId::FAT;
    // Identical maps.
    let a = cm(4, 2, &[4, 4, 0, 0, 4, 4, 0, 0]);
    ensure(dice(&a, &a, fat).map_err(s)? == Some(1.0), || "identical maps".into())?;
    // Disjoint non-empty sets.
    let b = cm(4, 2, &[0, 0, 4, 4, 0, 0, 4, 4]);
    ensure(dice(&a, &b, fat).map_err(s)? == Some(0.0), || "disjoint maps".into())?;
    // |P| = |T| = 4, |P n T| = 2.
    let p = cm(4, 2, &[4, 4, 4, 4, 0, 0, 0, 0]);
    let t = cm(4, 2, &[0, 0, 4, 4, 4, 4, 0, 0]);
    ensure(dice(&p, &t, fat).map_err(s)? == Some(0.5), || "half overlap".into())?;
    // Pooled over frames: 1.0 and 0.0 with equal mass pool to 0.5.
    let f1p = cm(2, 2, &[4, 4, 0, 0]);
    let f2p = cm(2, 2, &[4, 4, 0, 0]);
    let f2t = cm(2, 2, &[0, 0, 4, 4]);
    let pooled = dice_report(&[f1p.clone(), f2p], &[f1p, f2t]).map_err(s)?;
    ensure(pooled.dice(fat) == Some(0.5), || format!("pooled dice {:?}", pooled.dice(fat)))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xd1ce);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for _ in 0..50 {
        let (w, h) = (rng.random_range(1..=40u32), rng.random_range(1..=40u32));
        let k = rng.random_range(1..=9u8);
        let gen = |rng: &mut ChaCha8Rng| -> Vec<u8> { (0..w * h).map(|_| rng.random_range(0..k)).collect() };
        let (pr, tr) = (gen(&mut rng), gen(&mut rng));
        let (pm, tm) = (cm(w, h, &pr), cm(w, h, &tr));
        for c in ClassId::ALL {
            let lib = dice(&pm, &tm, c).map_err(s)?;
            let oracle = f1(&pr, &tr, c.get());
            match (lib, oracle) {
                (None, None) => {}
                (Some(x), Some(y)) => {
                    worst = worst.max((x - y).abs());
                    compared += 1;
                }
                _ => return Err(format!("presence mismatch for class {}: {lib:?} vs {oracle:?}", c.get())),
            }
        }
    }
    ensure(worst < 1e-12, || format!("max |dice - F1| = {worst:e}"))?;
    Ok(format!("fixtures 1.0/0.0/0.5/pooled 0.5 exact; {compared} class scores vs F1, max |delta| {worst:e}"))
}

// ---------------------------------------------------------------- search

fn small_spec(frames: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        width: 160,
        height: 90,
        ..SyntheticSpec::new(frames, 0.2, seed)
    }
}

/// Brute force: one-hot squared error averaged over cells and classes,
/// stable sort so ties stay in index order.
fn oracle_rank(index: &FrameIndex, query: &ClassMap) -> Vec<(usize, f64)> {
    let (gw, gh) = index.grid();
    let (w, h) = (query.width() as usize, query.height() as usize);
    let mut q = Vec::with_capacity((gw * gh) as usize);
    for j in 0..gh as usize {
        let y = (((j as f64) + 0.5) * h as f64 / f64::from(gh)).floor() as usize;
        for i in 0..gw as usize {
            let x = (((i as f64) + 0.5) * w as f64 / f64::from(gw)).floor() as usize;
            q.push(query.as_raw()[y * w + x]);
        }
    }
    let mut scored: Vec<(usize, f64)> = index
        .entries()
        .iter()
        .enumerate()
        .map(|(n, e)| {
            let mut sq = 0u64;
            for (&a, &b) in e.cells.iter().zip(&q) {
                for c in 0..9u8 {
                    let d = i64::from(a == c) - i64::from(b == c);
                    sq += (d * d) as u64;
                }
            }
            (n, sq as f64 / (q.len() * 9) as f64)
        })
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1));
    scored
}

fn search_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ea7);
    let other = generate_synthetic(&small_spec(60, 991)).map_err(s)?;
    let mut tied_queries = 0;
    for (n, seed) in [(100usize, 11u64), (500, 12), (1000, 13)] {
        let corpus = generate_synthetic(&small_spec(n, seed)).map_err(s)?;
        let refs: Vec<(FrameRef, &ClassMap)> = corpus.frames.iter().map(|f| (f.frame.clone(), &f.truth)).collect();
        let index = build_index(&refs, DEFAULT_GRID).map_err(s)?;
        for qn in 0..20 {
            let query = match qn % 4 {
                0 => corpus.frames[rng.random_range(0..n)].noisy.clone(),
                1 => other.frames[rng.random_range(0..other.frames.len())].truth.clone(),
                2 => ClassMap::filled(160, 90, ClassId::new(rng.random_range(0..9)).unwrap()).unwrap(),
                _ => cm(160, 90, &(0..160 * 90).map(|_| rng.random_range(0..9u8)).collect::<Vec<_>>()),
            };
            let oracle = oracle_rank(&index, &query);
            let distinct: HashSet<u64> = oracle.iter().map(|o| o.1.to_bits()).collect();
            if distinct.len() < oracle.len() {
                tied_queries += 1;
            }

            let hits = search(
                &index,
                &Reference::Map(query.clone()),
                &SearchParams { k: n, min_gap_ms: 0 },
            )
            .map_err(s)?
            .hits;
            ensure(hits.len() == n, || format!("n={n} query {qn}: {} hits", hits.len()))?;
            for (rank, (hit, (idx, d))) in hits.iter().zip(&oracle).enumerate() {
                ensure(hit.frame == index.entries()[*idx].frame, || {
                    format!("n={n} query {qn}: rank {rank} is {} not {}", hit.frame.key(), index.entries()[*idx].frame.key())
                })?;
                ensure((hit.distance - d).abs() <= 1e-15, || format!("n={n} query {qn}: distance {} vs {d}", hit.distance))?;
            }

            let cells = index.prepare_reference(&query).map_err(s)?;
            for exec in [Exec::Sequential, Exec::default()] {
                let order: Vec<usize> = index.rank_all(exec, cells.as_raw()).into_iter().map(|r| r.0).collect();
                let want: Vec<usize> = oracle.iter().map(|o| o.0).collect();
                ensure(order == want, || format!("n={n} query {qn}: rank_all order differs ({exec:?})"))?;
            }
        }
    }
    Ok(format!("3 corpora x 20 queries match brute force exactly, {tied_queries} queries with ties"))
}

fn self_retrieval(corpus: &SyntheticCorpus, fused: &[FusedScene]) -> Outcome {
    ensure(fused.len() == corpus.frames.len(), || "fusion_repair produced no scenes".into())?;
    let refs: Vec<(FrameRef, &ClassMap)> = corpus.frames.iter().map(|f| (f.frame.clone(), &f.truth)).collect();
    let index = build_index(&refs, DEFAULT_GRID).map_err(s)?;
    let distinct: HashSet<&[u8]> = index.entries().iter().map(|e| e.cells.as_slice()).collect();
    ensure(distinct.len() == index.len(), || "corpus grid maps are not pairwise distinct".into())?;
    let top1 = SearchParams { k: 1, min_gap_ms: 0 };

    let mut grid_hits = 0;
    for e in index.entries() {
        let grid = ClassMap::from_raw(DEFAULT_GRID.0, DEFAULT_GRID.1, e.cells.clone()).map_err(s)?;
        let r = search(&index, &Reference::Map(grid), &top1).map_err(s)?;
        if r.hits[0].frame == e.frame {
            grid_hits += 1;
        }
    }

    let cfg = ExtractConfig::default();
    ensure(cfg.epsilon == 2.0, || "default epsilon is not 2.0".into())?;
    let mut poly_hits = 0;
    for (scene, f) in fused.iter().zip(&corpus.frames) {
        let polys = extract_polygons(scene, &cfg);
        let r = search(&index, &Reference::Polygons(polys), &top1).map_err(s)?;
        if r.hits[0].frame == f.frame {
            poly_hits += 1;
        }
    }
    let n = index.len();
    let detail = format!("grid maps {grid_hits}/{n} (need all), polygon round trip {poly_hits}/{n} (need 95%)");
    ensure(grid_hits == n && poly_hits * 100 >= n * 95, || detail.clone())?;
    Ok(detail)
}

fn judgments_fixture(relevant: usize) -> String {
    (0..25)
        .map(|q| {
            let js: Vec<bool> = (0..9).map(|j| q * 9 + j < relevant).collect();
            serde_json::json!({ "query_id": format!("q{q:02}"), "judgments": js }).to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn a_at_n() -> Outcome {
    let mut got = Vec::new();
    for (relevant, want) in [(70usize, 0.3111), (198, 0.8800)] {
        let queries = parse_judgments(&judgments_fixture(relevant)).map_err(s)?;
        let a = evaluate_a_at_n(&queries, 9).map_err(s)?;
        ensure((a - want).abs() <= 1e-4, || format!("{relevant} relevant: A@9 {a:.6}, want {want}"))?;
        got.push(format!("{relevant} relevant -> {a:.4}"));
    }
    Ok(got.join(", "))
}

// ------------------------------------------------------------- keyframes

/// Mean pairwise cosine over each window from the full similarity matrix.
fn naive_signal(rows: &[Vec<f32>], w: usize) -> Vec<f64> {
    let t = rows.len();
    let sim: Vec<Vec<f64>> = rows
        .iter()
        .map(|a| {
            rows.iter()
                .map(|b| {
                    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
                    let na: f64 = a.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                    let nb: f64 = b.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                    (dot / (na * nb)).clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    (0..t)
        .map(|c| {
            let (lo, hi) = (c.saturating_sub(w), (c + w).min(t - 1));
            if lo == hi {
                return 1.0;
            }
            let (mut sum, mut pairs) = (0.0, 0usize);
            for i in lo..=hi {
                for j in i + 1..=hi {
                    sum += sim[i][j];
                    pairs += 1;
                }
            }
            sum / pairs as f64
        })
        .collect()
}

fn series(rows: &[Vec<f32>]) -> FeatureSeries {
    let dim = rows[0].len();
    FeatureSeries::with_default_frames(dim, rows.concat(), "v").unwrap()
}

fn keyframe_blocks() -> Outcome {
    const DIM: usize = 16;
    let cfg = KeyframeConfig::default();
    let w = cfg.half_width;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e7);
    let mut worst_offset = 0.0f64;
    // Clean blocks carry the centre requirement. With noise the signal has no
    // exact plateau, so only the count and block membership are checked.
    for sigma in [0.0f32, 0.01] {
        let noise = Normal::new(0.0f32, sigma).unwrap();
        for k in 2..=8usize {
            for trial in 0..5 {
                let lens: Vec<usize> = (0..k).map(|_| rng.random_range(35..=60)).collect();
                let mut dims: Vec<usize> = (0..DIM).collect();
                dims.shuffle(&mut rng);
                let mut rows = Vec::new();
                for (b, &len) in lens.iter().enumerate() {
                    for _ in 0..len {
                        let mut v: Vec<f32> = (0..DIM).map(|_| noise.sample(&mut rng)).collect();
                        v[dims[b]] += 1.0;
                        rows.push(v);
                    }
                }
                let found = keyframes(&series(&rows), &cfg).map_err(s)?;
                let tag = format!("sigma={sigma} K={k} trial {trial}");
                ensure(found.len() == k, || {
                    let at: Vec<usize> = found.iter().map(|f| f.index).collect();
                    format!("{tag}: {} keyframes at {at:?}", found.len())
                })?;
                let mut start = 0;
                for (b, (&len, kf)) in lens.iter().zip(&found).enumerate() {
                    let center = start as f64 + (len - 1) as f64 / 2.0;
                    let off = (kf.index as f64 - center).abs();
                    let centred = sigma > 0.0 || off <= w as f64;
                    ensure((start..start + len).contains(&kf.index) && centred, || {
                        format!("{tag}: block {b} [{start},{}) keyframe {}", start + len, kf.index)
                    })?;
                    if sigma == 0.0 {
                        worst_offset = worst_offset.max(off);
                    }
                    start += len;
                }
            }
        }
    }

    let constant = vec![vec![0.3f32, 0.1, 0.7]; 64];
    let found = keyframes(&series(&constant), &cfg).map_err(s)?;
    ensure(found.len() == 1, || format!("constant series gave {} keyframes", found.len()))?;

    let mut worst = 0.0f64;
    for &(t, d, hw) in &[(1usize, 4usize, 15usize), (2, 4, 1), (37, 24, 3), (200, 16, 15), (500, 32, 15), (500, 8, 40)] {
        let rows: Vec<Vec<f32>> = (0..t)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0f32..1.0) + if rng.random_bool(0.5) { 1.5 } else { 0.0 }).collect())
            .collect();
        let lib = banded_similarity_signal(&series(&rows), hw).map_err(s)?.values;
        let naive = naive_signal(&rows, hw);
        for (a, b) in lib.iter().zip(&naive) {
            worst = worst.max((a - b).abs());
        }
        ensure(lib.len() == t, || "signal length".into())?;
    }
    ensure(worst <= 1e-9, || format!("signal vs naive max |delta| {worst:e}"))?;
    Ok(format!(
        "K=2..8 x 5 trials clean and noisy exact count, clean max centre offset {worst_offset:.1} <= {w}; constant -> 1; naive max |delta| {worst:e}"
    ))
}

// -------------------------------------------------------------- geometry

fn geometry_round_trip(fused: &[FusedScene]) -> Outcome {
    ensure(fused.len() >= 100, || "fusion_repair produced no scenes".into())?;
    let cfg = ExtractConfig::default();
    let mut worst = (1.0f64, String::new());
    let mut scored = 0;
    for (n, scene) in fused.iter().take(100).enumerate() {
        let area = u64::from(scene.width()) * u64::from(scene.height());
        ensure(scene.sections().iter().all(|r| r.pixel_count * 100 >= area), || format!("scene {n} has a component under 1%"))?;
        let raster = rasterize(&extract_polygons(scene, &cfg));
        for c in ClassId::ALL.into_iter().filter(|&c| c != ClassId::BACKGROUND) {
            if let Some(d) = dice(&raster, scene.class_map(), c).map_err(s)? {
                scored += 1;
                if d < worst.0 {
                    worst = (d, format!("scene {n} {}", c.name()));
                }
            }
        }
    }
    let detail = format!("{scored} class scores, min dice {:.4} ({})", worst.0, worst.1);
    ensure(worst.0 >= 0.90, || detail.clone())?;
    Ok(detail)
}

// ------------------------------------------------------------------ quiz

fn text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 8] = ["Calot", "triangle ", "\"quoted\"", "é∂ü", "\n", "\\", "cystic duct", "\u{1F52A}"];
    (0..rng.random_range(0..6)).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

fn point(rng: &mut ChaCha8Rng) -> Point {
    Point::new(rng.random_range(-10.0..900.0), rng.random::<f64>() * 480.0)
}

fn frame_ref(rng: &mut ChaCha8Rng) -> FrameRef {
    FrameRef::new(format!("video{:02}", rng.random_range(0..50)), rng.random_range(0..u64::from(u32::MAX)), rng.random())
}

fn feedback(rng: &mut ChaCha8Rng) -> RegionFeedback {
    RegionFeedback {
        frame: frame_ref(rng),
        anchor: if rng.random_bool(0.5) {
            Anchor::Section { id: rng.random_range(0..500) }
        } else {
            Anchor::Polygon { ring: (0..rng.random_range(3..9)).map(|_| point(rng)).collect() }
        },
        text: text(rng),
        style: *[HighlightStyle::Fill, HighlightStyle::Outline, HighlightStyle::Arrow].choose(rng).unwrap(),
    }
}

fn question(rng: &mut ChaCha8Rng, kind: usize) -> Question {
    match kind {
        0 => {
            let n = rng.random_range(2..6);
            Question::Mcq(McqQuestion {
                stem: RichText {
                    text: text(rng),
                    images: (0..rng.random_range(0..3)).map(|i| format!("{i:064x}.png")).collect(),
                },
                options: (0..n)
                    .map(|_| McqOption {
                        text: rng.random_bool(0.7).then(|| text(rng)),
                        image: rng.random_bool(0.3).then(|| "a.jpg".to_string()),
                        feedback: (0..rng.random_range(0..3)).map(|_| feedback(rng)).collect(),
                    })
                    .collect(),
                correct: (0..n).filter(|_| rng.random_bool(0.4)).collect(),
            })
        }
        1 => Question::Extract(ExtractQuestion {
            frame: frame_ref(rng),
            removed_section: rng.random_range(0..100),
            inpainted_asset: "fill.png".into(),
            prompt: text(rng),
            options: (0..rng.random_range(1..5)).map(|i| format!("tool{i}.png")).collect(),
            answer_key: ExtractAnswer {
                tool_class: ClassId::new(rng.random_range(0..9)).unwrap(),
                acceptable_options: (0..4).filter(|_| rng.random_bool(0.5)).collect(),
                placement: (0..rng.random_range(0..7)).map(|_| point(rng)).collect(),
            },
        }),
        _ => Question::Path(PathQuestion {
            frame: frame_ref(rng),
            target_section: rng.random_range(0..100),
            prompt: text(rng),
            author_path: (0..rng.random_range(2..40)).map(|_| point(rng)).collect(),
            tolerance: rng.random_range(0.5..80.0),
        }),
    }
}

fn random_quiz(rng: &mut ChaCha8Rng, n: usize) -> Quiz {
    let secs = rng.random_range(0..4_000_000_000i64);
    let created = Utc.timestamp_opt(secs, rng.random_range(0..1_000_000_000)).unwrap();
    Quiz {
        schema: QUIZ_SCHEMA.into(),
        id: format!("quiz-{n}"),
        title: text(rng),
        author: text(rng),
        created,
        modified: created + chrono::Duration::nanoseconds(rng.random_range(0..10_i64.pow(15))),
        source_videos: (0..rng.random_range(0..3)).map(|v| format!("video{v:02}")).collect(),
        questions: (0..rng.random_range(1..6)).map(|_| {
            let kind = rng.random_range(0..3);
            question(rng, kind)
        }).collect(),
    }
}

fn quiz_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9015);
    let mut kinds = [0usize; 3];
    for n in 0..500 {
        let mut quiz = random_quiz(&mut rng, n);
        // Every variant shows up in every third quiz at least.
        if n % 3 == 0 {
            quiz.questions.extend((0..3).map(|k| question(&mut rng, k)));
        }
        for q in &quiz.questions {
            kinds[match q {
                Question::Mcq(_) => 0,
                Question::Extract(_) => 1,
                Question::Path(_) => 2,
            }] += 1;
        }
        let json = quiz_to_json(&quiz);
        let back = quiz_from_json(&json).map_err(|e| format!("quiz {n}: {e}"))?;
        ensure(back == quiz, || format!("quiz {n} changed in round trip"))?;
        ensure(quiz_to_json(&back) == json, || format!("quiz {n} reserialized differently"))?;
    }
    ensure(kinds.iter().all(|&k| k > 0), || "a variant was never generated".into())?;

    let author = vec![Point::new(10.0, 10.0), Point::new(60.0, 40.0), Point::new(120.0, 45.0)];
    let q = PathQuestion {
        frame: FrameRef::new("v", 0, 0),
        target_section: 0,
        prompt: String::new(),
        author_path: author.clone(),
        tolerance: 30.0,
    };
    let same = grade_path(&q, &author).map_err(s)?;
    ensure(same.distance == 0.0 && same.score == 1.0 && same.pass, || format!("identity graded {same:?}"))?;
    let shifted: Vec<Point> = author.iter().map(|p| Point::new(p.x + 18.0, p.y + 24.0)).collect();
    let edge = grade_path(&q, &shifted).map_err(s)?;
    ensure(edge.distance == 30.0 && edge.pass && edge.score == 0.5, || format!("translation by tolerance graded {edge:?}"))?;
    let beyond: Vec<Point> = author.iter().map(|p| Point::new(p.x + 18.0, p.y + 24.5)).collect();
    let over = grade_path(&q, &beyond).map_err(s)?;
    ensure(!over.pass, || format!("translation past tolerance graded {over:?}"))?;
    Ok(format!(
        "500 quizzes ({} mcq, {} extract, {} path) identical after round trip; path fixtures exact",
        kinds[0], kinds[1], kinds[2]
    ))
}

// --------------------------------------------------------------- service

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn service_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(s)?;
    let root = dir.path().join("proj");
    let spec = SyntheticSpec {
        width: 160,
        height: 90,
        ..SyntheticSpec::new(24, 0.25, 7)
    };
    let (mut project, _) = write_synthetic_project(&root, &spec, Exec::default()).map_err(s)?;
    let frames: Vec<FrameRef> = project.frames().iter().map(|f| f.frame.clone()).collect();
    let first = project.read_fused(&frames[0]).map_err(s)?;
    let target = first.sections().iter().max_by_key(|r| r.pixel_count).unwrap().id;
    let author = vec![Point::new(20.0, 20.0), Point::new(80.0, 50.0), Point::new(140.0, 70.0)];
    let quiz = Quiz {
        schema: QUIZ_SCHEMA.into(),
        id: "contract".into(),
        title: "Contract".into(),
        author: String::new(),
        created: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
        modified: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
        source_videos: vec![],
        questions: vec![
            Question::Mcq(McqQuestion {
                stem: RichText { text: "Which is the liver?".into(), images: vec![] },
                options: vec![
                    McqOption {
                        text: Some("this".into()),
                        image: None,
                        feedback: vec![RegionFeedback {
                            frame: frames[0].clone(),
                            anchor: Anchor::Section { id: target },
                            text: "here".into(),
                            style: HighlightStyle::Outline,
                        }],
                    },
                    McqOption { text: Some("that".into()), ..McqOption::default() },
                ],
                correct: BTreeSet::from([0]),
            }),
            Question::Path(PathQuestion {
                frame: frames[0].clone(),
                target_section: target,
                prompt: "Trace it".into(),
                author_path: author.clone(),
                tolerance: 30.0,
            }),
        ],
    };
    project.put_quiz(&quiz).map_err(s)?;
    let project = Project::load(&root).map_err(s)?;
    let index = project.load_index().map_err(s)?;
    let state = AppState::new(project.clone(), surgq_core::quiz::FallbackInpainter::new(None)).map_err(s)?;
    let app = router(state.shared());

    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(s)?;
    rt.block_on(async {
        let cfg = ExtractConfig::default();
        let mut checked = 0;

        for f in frames.iter().step_by(5) {
            let (st, got) = call(&app, "GET", &format!("/frames/{}/polygons", f.key()), None).await;
            ensure(st == StatusCode::OK, || format!("polygons {}: {st}", f.key()))?;
            let want = serde_json::to_value(extract_polygons(&project.read_fused(f).map_err(s)?, &cfg)).unwrap();
            ensure(got == want, || format!("polygons payload differs for {}", f.key()))?;
            checked += 1;

            let scene = extract_polygons(&project.read_fused(f).map_err(s)?, &cfg);
            for (k, gap) in [(Some(5), Some(0)), (None, None)] {
                let req = SearchRequest { scene: scene.clone(), k, min_gap_ms: gap };
                let (st, got) = call(&app, "POST", "/search", Some(serde_json::to_value(&req).unwrap())).await;
                ensure(st == StatusCode::OK, || format!("search: {st} {got}"))?;
                let got: SearchResponse = serde_json::from_value(got).map_err(s)?;
                let want = search(&index, &Reference::Polygons(scene.clone()), &req.params()).map_err(s)?;
                ensure(got.query == want.query, || "search echo differs".into())?;
                let pairs: Vec<(&FrameRef, f64)> = got.hits.iter().map(|h| (&h.frame, h.distance)).collect();
                let wants: Vec<(&FrameRef, f64)> = want.hits.iter().map(|h| (&h.frame, h.distance)).collect();
                ensure(pairs == wants, || format!("search hits differ for {}", f.key()))?;
                ensure(got.hits.iter().all(|h| h.id == h.frame.key()), || "hit ids are not frame keys".into())?;
                checked += 1;
            }
        }

        let answers = [
            (0, Answer::Mcq { chosen: BTreeSet::from([0]) }),
            (0, Answer::Mcq { chosen: BTreeSet::from([0, 1]) }),
            (1, Answer::Path { path: author.clone() }),
            (1, Answer::Path { path: author.iter().map(|p| Point::new(p.x + 18.0, p.y + 24.0)).collect() }),
            (1, Answer::Path { path: author.iter().rev().map(|p| Point::new(p.x, p.y + 50.0)).collect() }),
        ];
        for (qi, answer) in answers {
            let req = GradeRequest { question: qi, answer: answer.clone() };
            let (st, got) = call(&app, "POST", "/quizzes/contract/grade", Some(serde_json::to_value(&req).unwrap())).await;
            ensure(st == StatusCode::OK, || format!("grade: {st} {got}"))?;
            let want = match (&quiz.questions[qi], &answer) {
                (Question::Mcq(q), Answer::Mcq { chosen }) => {
                    serde_json::to_value(grade_mcq(q, chosen).map_err(s)?).unwrap()
                }
                (Question::Path(q), Answer::Path { path }) => {
                    serde_json::to_value(grade_path(q, path).map_err(s)?).unwrap()
                }
                _ => unreachable!(),
            };
            let mut got_inner = got.clone();
            ensure(got_inner.as_object_mut().and_then(|o| o.remove("type")).is_some(), || "grade has no type tag".into())?;
            ensure(got_inner == want, || format!("grade differs: {got} vs {want}"))?;
            let direct = serde_json::to_value(grade_answer(&quiz.questions[qi], &answer).map_err(|e| format!("{e:?}"))?).unwrap();
            ensure(got == direct, || "grade_answer differs from endpoint".into())?;
            checked += 1;
        }
        let secondary = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../webui").exists();
        Ok(format!(
            "{checked} payloads equal to direct library calls; secondary component {}",
            if secondary { "present but unused" } else { "not built" }
        ))
    })
}
