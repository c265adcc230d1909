//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use common::{bfs_labels, grad_case, gradient_errors, hamming_fraction, mean_abs_diff, s2_axis, s2_radial_periodic, Cells};
use texsyn::config::RunConfig;
use texsyn::grids::{load_texture, save_texture, TextureGrid};
use texsyn::metrics::{c2, label_clusters, porosity, s2_directional, s2_radial, Averaging, Boundary, Connectivity};
use texsyn::nets::{projective_field, Generator, GeneratorSpec};
use texsyn::nn::{Activations, Mode};
use texsyn::procedural::{bernoulli_texture, channel_texture, ChannelParams};
use texsyn::segmentation::{assemble, extract_segments, plan_layout};
use texsyn::synthesis::{seam_scan, SEAM_MAX_LAG};
use texsyn::training::{d_loss, g_loss, GanMode, TrainConfig, Trainer};
use texsyn::{Grid, Grid64};

type Outcome = Result<String, String>;
type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cli(args: &[&str]) -> Result<(), String> {
    let argv: Vec<String> = std::iter::once("texsyn").chain(args.iter().copied()).map(String::from).collect();
    match texsyn::cli::run(argv) {
        0 => Ok(()),
        code => Err(format!("`texsyn {}` exited with {code}", args.join(" "))),
    }
}

fn write_json(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

// 1. Loss equivalence

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn loss_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(1..=64);
        let real: Vec<f64> = (0..m).map(|_| rng.random_range(1e-4..1.0 - 1e-4)).collect();
        let fake: Vec<f64> = (0..m).map(|_| rng.random_range(1e-4..1.0 - 1e-4)).collect();
        // Whole-image reference losses.
        let ref_d = -real.iter().zip(&fake).map(|(r, f)| r.ln() + (1.0 - f).ln()).sum::<f64>() / (2.0 * m as f64);
        let ref_g = -fake.iter().map(|f| f.ln()).sum::<f64>() / (2.0 * m as f64);
        worst = worst.max(rel(d_loss(&real, &fake).unwrap(), ref_d));
        worst = worst.max(rel(g_loss(&fake).unwrap(), ref_g));
    }
    let ln2 = std::f64::consts::LN_2;
    let dp = (d_loss(&[0.5f64], &[0.5]).unwrap() - ln2).abs();
    let gp = (g_loss(&[0.5f64]).unwrap() - 0.5 * ln2).abs();

    // Whole-image SAGAN and DCGAN trainers from one seed take identical steps.
    let ti = channel_texture::<f64>(32, 32, ChannelParams::default(), 3);
    let gs = GeneratorSpec::new(vec![4, 4], vec![8, 4], 3);
    let ds = texsyn::nets::DiscriminatorSpec::new(vec![16, 16], vec![4, 8], 3);
    let whole = plan_layout(&[16, 16], &[16, 16], &[0, 0]).unwrap();
    let mut a = Trainer::new(std::slice::from_ref(&ti), &gs, &ds, TrainConfig::new(GanMode::Dcgan, 4, 5, 3)).unwrap();
    let mut b = Trainer::new(&[ti], &gs, &ds, TrainConfig::new(GanMode::Sagan, 4, 5, 3).with_layout(whole)).unwrap();
    let mut trainer_worst = 0.0f64;
    for _ in 0..5 {
        let (ra, rb) = (a.step().unwrap(), b.step().unwrap());
        trainer_worst = trainer_worst.max(rel(ra.j_d, rb.j_d)).max(rel(ra.j_g, rb.j_g));
    }
    check(
        worst <= 1e-6 && trainer_worst <= 1e-6 && dp <= 1e-12 && gp <= 1e-12,
        format!(
            "max rel err {worst:.1e} over 100 score vectors, {trainer_worst:.1e} over 5 trainer steps; \
             |d_loss(0.5,0.5)-ln2| {dp:.1e}, |g_loss(0.5)-ln2/2| {gp:.1e}"
        ),
    )
}

// 2. Gradient correctness

fn gradient_correctness() -> Outcome {
    let mut seg = grad_case([3, 3], [2, 2]);
    let (sd, sg, n) = gradient_errors(&mut seg);
    let mut whole = grad_case([4, 4], [0, 0]);
    let (wd, wg, _) = gradient_errors(&mut whole);
    let worst = sd.max(sg).max(wd).max(wg);
    check(
        worst <= 1e-3,
        format!(
            "{n} scalars, 4 segments: J_D {sd:.1e}, J_G {sg:.1e}; whole image: J_D {wd:.1e}, J_G {wg:.1e} (tol 1e-3)"
        ),
    )
}

// 3. Segment arithmetic

fn segment_arithmetic() -> Outcome {
    let a = plan_layout(&[256, 256], &[130, 130], &[4, 4]).map_err(|e| e.to_string())?;
    let b = plan_layout(&[528, 1040], &[144, 144], &[16, 16]).map_err(|e| e.to_string())?;
    if a.n() != 4 || b.n() != 32 {
        return Err(format!("n = {} and {}, expected 4 and 32", a.n(), b.n()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..200 {
        let nd = if case % 2 == 0 { 2 } else { 3 };
        let max_seg = if nd == 2 { 12 } else { 6 };
        let mut seg = Vec::new();
        let mut ov = Vec::new();
        let mut out = Vec::new();
        for _ in 0..nd {
            let s = rng.random_range(2..=max_seg);
            let o = rng.random_range(0..s);
            let c = rng.random_range(1..=4);
            seg.push(s);
            ov.push(o);
            out.push(c * s - (c - 1) * o);
        }
        let layout = plan_layout(&out, &seg, &ov).map_err(|e| format!("case {case}: {e}"))?;
        let grid = bernoulli_texture::<f32>(&out, 0.5, case as u64);
        let back = assemble(&extract_segments(&grid, &layout).unwrap(), &layout).unwrap();
        if back != grid {
            return Err(format!("case {case}: assemble(extract) differs for {out:?}/{seg:?}/{ov:?}"));
        }
    }
    Ok("n=4 for 256²/130²/4 and n=32 for 528×1040/144²/16; 200 extract/assemble round trips exact".into())
}

// 4. Architecture table

struct Row {
    stem: &'static str,
    lattice: &'static [usize],
    g_filters: &'static [usize],
    d_filters: &'static [usize],
    generated: &'static [usize],
}

const TABLE: &[Row] = &[
    Row { stem: "01_2d_strebelle_dcgan_1ti_256", lattice: &[32, 32], g_filters: &[64, 32, 16], d_filters: &[16, 32, 64], generated: &[256, 256] },
    Row { stem: "02_2d_strebelle_dcgan_100ti_256", lattice: &[32, 32], g_filters: &[64, 32, 16], d_filters: &[16, 32, 64], generated: &[256, 256] },
    Row { stem: "03_2d_strebelle_sagan_100ti_256", lattice: &[32, 32], g_filters: &[64, 32, 16], d_filters: &[16, 32, 64], generated: &[256, 256] },
    Row { stem: "04_2d_strebelle_sagan_1ti_528x1040", lattice: &[33, 65], g_filters: &[128, 64, 32, 16], d_filters: &[16, 32, 64, 128], generated: &[528, 1040] },
    Row { stem: "05_2d_beadpack_dcgan_256ti_256", lattice: &[32, 32], g_filters: &[64, 32, 16], d_filters: &[16, 32, 64], generated: &[256, 256] },
    Row { stem: "06_2d_beadpack_dcgan_256ti_512", lattice: &[64, 64], g_filters: &[64, 32, 16], d_filters: &[16, 32, 64], generated: &[512, 512] },
    Row { stem: "07_2d_beadpack_sagan_256ti_256", lattice: &[32, 32], g_filters: &[64, 32, 16], d_filters: &[16, 32, 64], generated: &[256, 256] },
    Row { stem: "08_2d_beadpack_sagan_256ti_512", lattice: &[64, 64], g_filters: &[128, 64, 32], d_filters: &[32, 64, 128], generated: &[512, 512] },
    Row { stem: "09_3d_beadpack_dcgan_1ti_256", lattice: &[4, 4, 4], g_filters: &[64, 32, 16, 8, 4, 4], d_filters: &[4, 4, 8, 16, 32, 64], generated: &[256, 256, 256] },
    Row { stem: "10_3d_beadpack_dcgan_100ti_128", lattice: &[8, 8, 8], g_filters: &[64, 32, 16, 8], d_filters: &[8, 16, 32, 64], generated: &[128, 128, 128] },
    Row { stem: "11_3d_beadpack_sagan_1ti_256", lattice: &[8, 8, 8], g_filters: &[64, 32, 16, 8, 4], d_filters: &[4, 8, 16, 32, 64], generated: &[256, 256, 256] },
    Row { stem: "12_3d_beadpack_sagan_1ti_128", lattice: &[8, 8, 8], g_filters: &[64, 32, 16, 8], d_filters: &[8, 16, 32, 64], generated: &[128, 128, 128] },
    Row { stem: "13_3d_beadpack_sagan_1ti_256x256x320", lattice: &[8, 8, 10], g_filters: &[64, 32, 16, 8, 4], d_filters: &[4, 8, 16, 32, 64], generated: &[256, 256, 320] },
    Row { stem: "14_3d_fold_dcgan_1ti_128", lattice: &[8, 8, 8], g_filters: &[64, 32, 16, 8], d_filters: &[8, 16, 32, 64], generated: &[128, 128, 128] },
    Row { stem: "15_3d_fold_dcgan_100ti_64", lattice: &[8, 8, 8], g_filters: &[64, 32, 16], d_filters: &[16, 32, 64], generated: &[64, 64, 64] },
    Row { stem: "16_3d_fold_sagan_1ti_128", lattice: &[8, 8, 8], g_filters: &[64, 32, 16, 8], d_filters: &[8, 16, 32, 64], generated: &[128, 128, 128] },
    Row { stem: "17_3d_fold_sagan_1ti_64", lattice: &[8, 8, 8], g_filters: &[64, 32, 16], d_filters: &[16, 32, 64], generated: &[64, 64, 64] },
    Row { stem: "18_3d_fold_sagan_1ti_256", lattice: &[8, 8, 8], g_filters: &[64, 32, 16, 8, 4], d_filters: &[4, 8, 16, 32, 64], generated: &[256, 256, 256] },
];

fn table_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference")
}

/// Extent of the output region that changes when one central lattice cell is bumped.
fn probe_field(spec: &GeneratorSpec) -> Vec<usize> {
    let mut g = Generator::<f64>::build(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    // Positive weights and inputs keep every ReLU open, so no contribution cancels.
    for t in g.params.tensors_mut().iter_mut().filter(|t| t.trainable) {
        let v = if t.name.ends_with("weight") { 0.05 } else { 0.0 };
        t.data.iter_mut().for_each(|x| *x = v);
    }
    let lat3: [usize; 3] = {
        let mut d = [1; 3];
        d[3 - spec.ndim()..].copy_from_slice(&spec.lattice_dims);
        d
    };
    let c = spec.channels();
    let cells: usize = lat3.iter().product();
    let base = vec![1.0; c * cells];
    let centre = lat3.map(|n| n / 2);
    let centre_idx = (centre[0] * lat3[1] + centre[1]) * lat3[2] + centre[2];
    let mut bumped = base.clone();
    for ch in 0..c {
        bumped[ch * cells + centre_idx] += 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut run = |data: Vec<f64>| {
        let z = Activations::from_vec(1, c, lat3, data).unwrap();
        g.forward_lattice(z, Mode::Infer, &mut rng).unwrap().0
    };
    let (a, b) = (run(base), run(bumped));
    let out3 = a.spatial;
    let (mut lo, mut hi) = ([usize::MAX; 3], [0usize; 3]);
    for (i, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
        if x != y {
            let p = [i / (out3[1] * out3[2]), (i / out3[2]) % out3[1], i % out3[2]];
            for ax in 0..3 {
                lo[ax] = lo[ax].min(p[ax]);
                hi[ax] = hi[ax].max(p[ax]);
            }
        }
    }
    (3 - spec.ndim()..3).map(|ax| hi[ax] + 1 - lo[ax]).collect()
}

fn architecture_table() -> Outcome {
    for row in TABLE {
        let path = table_dir().join(format!("{}.json", row.stem));
        let cfg = RunConfig::load(&path).map_err(|e| format!("{}: {e}", row.stem))?;
        cfg.validate().map_err(|e| format!("{}: {e}", row.stem))?;
        let out = cfg.generator.output_dims().map_err(|e| e.to_string())?;
        let kernel = if row.lattice.len() == 2 { 5 } else { 3 };
        let kernel_ok = cfg.generator.kernel.resolve(row.lattice.len()).unwrap() == vec![kernel; row.lattice.len()];
        if cfg.generator.lattice_dims != row.lattice
            || cfg.generator.filters != row.g_filters
            || cfg.discriminator.filters != row.d_filters
            || out != row.generated
            || !kernel_ok
        {
            return Err(format!(
                "{}: lattice {:?}, filters {:?}/{:?}, output {out:?}; table lists {:?}, {:?}/{:?}, {:?}",
                row.stem, cfg.generator.lattice_dims, cfg.generator.filters, cfg.discriminator.filters, row.lattice,
                row.g_filters, row.d_filters, row.generated
            ));
        }
    }
    let mut probes = Vec::new();
    for (lattice, filters, kernel) in [(vec![6, 6], vec![4, 3, 2], 5), (vec![5, 5], vec![3, 2], 4), (vec![4, 4, 4], vec![2, 2], 3)] {
        let mut spec = GeneratorSpec::new(lattice, filters, kernel);
        spec.use_batchnorm = false;
        let pf = projective_field(&spec).map_err(|e| e.to_string())?;
        let probed = probe_field(&spec);
        if pf != probed {
            return Err(format!("projective_field {pf:?} but probe saw {probed:?} for {spec:?}"));
        }
        probes.push(format!("{pf:?}"));
    }
    Ok(format!(
        "{} table rows reproduce z', filters and generated size; PF probes agree: {}",
        TABLE.len(),
        probes.join(", ")
    ))
}

// 5. Metric oracles

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (dims, max_lag): (Vec<usize>, usize) = if i < 50 { (vec![16, 16], 8) } else { (vec![8, 8, 8], 4) };
        let g = bernoulli_texture::<f64>(&dims, rng.random_range(0.2..0.7), 100 + i);
        let cells = Cells::of(&g);
        let lib = s2_radial(&g, max_lag, Boundary::Periodic, false).unwrap().values;
        let oracle = s2_radial_periodic(&cells, max_lag);
        worst = lib.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        for (avg, axis) in [(Averaging::DirectionalX, 2), (Averaging::DirectionalY, 1), (Averaging::DirectionalZ, 0)] {
            if axis == 0 && dims.len() == 2 {
                continue;
            }
            for (boundary, periodic) in [(Boundary::Periodic, true), (Boundary::Truncated, false)] {
                let lib = s2_directional(&g, avg, max_lag, boundary).unwrap().values;
                let oracle = s2_axis(&cells, axis, max_lag, periodic);
                worst = lib.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
            }
        }
    }
    if worst > 1e-10 {
        return Err(format!("S2 differs from pair counting by {worst:.1e}"));
    }

    let mut violations = 0;
    for i in 0..100u64 {
        let dims: Vec<usize> = if i % 2 == 0 { vec![24, 24] } else { vec![10, 10, 10] };
        let g = bernoulli_texture::<f64>(&dims, rng.random_range(0.2..0.7), 200 + i);
        let phi = porosity(&g).unwrap();
        let conn = if i % 4 < 2 { Connectivity::Face } else { Connectivity::Full };
        let boundary = if i % 3 == 0 { Boundary::Periodic } else { Boundary::Truncated };
        let mut avgs = vec![Averaging::DirectionalX, Averaging::DirectionalY, Averaging::RadialIsotropic];
        if dims.len() == 3 {
            avgs.push(Averaging::DirectionalZ);
        }
        for avg in avgs {
            let s = texsyn::metrics::curve(&g, texsyn::metrics::MetricKind::S2, avg, 4, boundary, conn).unwrap().values;
            let c = c2(&g, conn, 4, avg, boundary).unwrap().values;
            violations += s.iter().zip(&c).filter(|(s, c)| **c > **s + 1e-12 || **s > phi + 1e-12).count();
        }
    }
    if violations > 0 {
        return Err(format!("{violations} lags violate C2 <= S2 <= phi"));
    }

    let mut clusters = 0;
    for i in 0..50u64 {
        let g = bernoulli_texture::<f64>(&[12, 12, 12], rng.random_range(0.15..0.45), 300 + i);
        let cells = Cells::of(&g);
        for (conn, full) in [(Connectivity::Face, false), (Connectivity::Full, true)] {
            let lib = label_clusters(&g, conn, Boundary::Truncated).unwrap();
            let (labels, count) = bfs_labels(&cells, full);
            if lib.labels != labels || lib.cluster_count != count {
                return Err(format!("labelling of grid {i} ({conn:?}) differs from BFS"));
            }
            clusters += count;
        }
    }

    let g: Grid64 = bernoulli_texture(&[64, 64], 0.3, 7);
    let phi = porosity(&g).unwrap();
    let far = s2_radial(&g, 24, Boundary::Truncated, false).unwrap().values;
    let far_err = far[16..].iter().map(|v| (v - phi * phi).abs()).fold(0.0, f64::max);
    check(
        far_err <= 0.01,
        format!(
            "S2 vs pair counting max diff {worst:.1e}; C2 <= S2 <= phi on 100 grids; \
             labels equal BFS on 50 grids ({clusters} clusters); Bernoulli |S2(16..24) - phi²| max {far_err:.4}"
        ),
    )
}

// 6-8, 10: CLI runs on a procedural channel TI

const TI_SIZE: usize = 64;
const TI_SEED: u64 = 7;
const TRAIN_STEPS: u64 = 3000;
const REALIZATIONS: usize = 20;
const EVAL_LAG: usize = 16;
const WINDOW_LAG: usize = 8;

fn desk_config(dir: &Path, out: &str, steps: u64, count: usize) -> Value {
    json!({
        "mode": "sagan",
        "ti_paths": [dir.join("ti.png")],
        "out_dir": dir.join(out),
        "rng_seed": 1,
        "generator": {"lattice_dims": [8, 8], "filters": [32, 16, 8], "kernel": 5},
        "discriminator": {"input_dims": [34, 34], "filters": [8, 16, 32], "kernel": 5},
        "segment": [34, 34],
        "overlap": [4, 4],
        "training": {"batch_size": 8, "epochs": steps, "checkpoint_every": steps.min(1000)},
        "synthesis": {"output_dims": [TI_SIZE, TI_SIZE], "count": count},
        "metrics": {"kinds": ["s2", "c2"], "averaging": ["directional_x", "directional_y"], "max_lag": EVAL_LAG}
    })
}

fn pipeline(config: &Path) -> Result<(), String> {
    let c = config.to_str().unwrap();
    cli(&["train", "--config", c])?;
    cli(&["generate", "--config", c])?;
    cli(&["evaluate", "--config", c])
}

fn load_realizations(out: &Path) -> Result<Vec<Grid>, String> {
    let files = texsyn::cli::realization_files(&out.join("realizations")).map_err(|e| e.to_string())?;
    files.iter().map(|p| load_texture::<f32>(p).map_err(|e| e.to_string())).collect()
}

/// Ensemble-mean directional S2 (x, y) by pair counting.
fn mean_curves(cells: &[Cells], max_lag: usize) -> [Vec<f64>; 2] {
    [2, 1].map(|axis| {
        let mut acc = vec![0.0; max_lag + 1];
        for c in cells {
            for (a, v) in acc.iter_mut().zip(s2_axis(c, axis, max_lag, false)) {
                *a += v / cells.len() as f64;
            }
        }
        acc
    })
}

fn diversity(dir: &Path) -> Outcome {
    let config = dir.join("desk.json");
    write_json(&config, &desk_config(dir, "run", TRAIN_STEPS, REALIZATIONS));
    let t0 = Instant::now();
    pipeline(&config)?;
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    let reals = load_realizations(&dir.join("run"))?;
    if reals.len() != REALIZATIONS || reals.iter().any(|g| g.dims() != [TI_SIZE, TI_SIZE]) {
        return Err(format!("expected {REALIZATIONS} realizations of {TI_SIZE}², found {}", reals.len()));
    }
    let ti = load_texture::<f32>(dir.join("ti.png")).map_err(|e| e.to_string())?;
    let ti_cells = Cells::of(&ti);
    let cells: Vec<Cells> = reals.iter().map(Cells::of).collect();
    let phi_ti = ti_cells.porosity();
    let phi_mean = cells.iter().map(Cells::porosity).sum::<f64>() / cells.len() as f64;
    let ens = mean_curves(&cells, EVAL_LAG);
    let tic = mean_curves(std::slice::from_ref(&ti_cells), EVAL_LAG);
    let mae = [mean_abs_diff(&ens[0], &tic[0]), mean_abs_diff(&ens[1], &tic[1])];

    // The CLI's own report must agree with the pair-counting oracle.
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.join("run/evaluation/summary.json")).unwrap()).unwrap();
    let mut report_gap = 0.0f64;
    for cmp in summary["comparisons"].as_array().unwrap() {
        if cmp["kind"] == "s2" {
            let i = if cmp["averaging"] == "directional_x" { 0 } else { 1 };
            report_gap = report_gap.max((cmp["mae"].as_f64().unwrap() - mae[i]).abs());
        }
    }

    let mut min_hamming = f64::INFINITY;
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            min_hamming = min_hamming.min(hamming_fraction(&cells[i].on, &cells[j].on));
        }
    }
    check(
        (phi_mean - phi_ti).abs() <= 0.05 && mae[0] <= 0.05 && mae[1] <= 0.05 && report_gap < 1e-9 && min_hamming > 0.01,
        format!(
            "{TRAIN_STEPS} steps in {minutes:.1} min; porosity {phi_mean:.3} vs TI {phi_ti:.3}; \
             S2 MAE x {:.4}, y {:.4} (r <= {EVAL_LAG}); min pairwise Hamming {:.1}%",
            mae[0],
            mae[1],
            100.0 * min_hamming
        ),
    )
}

fn seam_absence(dir: &Path) -> Outcome {
    let reals = load_realizations(&dir.join("run"))?;
    if reals.is_empty() {
        return Err("no realizations from the diversity run".into());
    }
    let layout = plan_layout(&[TI_SIZE, TI_SIZE], &[34, 34], &[4, 4]).unwrap();
    let (mut below, mut total, mut worst) = (0usize, 0usize, 0.0f64);
    for g in &reals {
        let rep = seam_scan(g, &layout, SEAM_MAX_LAG).map_err(|e| e.to_string())?;
        below += rep.boundaries.iter().filter(|b| b.z.abs() < 3.0).count();
        total += rep.boundaries.len();
        worst = worst.max(rep.max_abs_z());
    }
    let fraction = below as f64 / total as f64;

    // Control: two independent textures placed side by side.
    let p = ChannelParams { channels: 16, ..ChannelParams::default() };
    let a = channel_texture::<f32>(256, 64, p, 0);
    let b = channel_texture::<f32>(256, 64, p, 1);
    let joined: Grid = TextureGrid::binary_from_fn(vec![256, 128], |i| {
        let (y, x) = (i / 128, i % 128);
        if x < 64 {
            a.data()[y * 64 + x] > 0.5
        } else {
            b.data()[y * 64 + x - 64] > 0.5
        }
    });
    let control_layout = plan_layout(&[256, 128], &[256, 66], &[0, 4]).unwrap();
    let control = seam_scan(&joined, &control_layout, SEAM_MAX_LAG).map_err(|e| e.to_string())?;
    let control_z = control.boundaries.iter().map(|b| b.z).fold(f64::NEG_INFINITY, f64::max);
    check(
        fraction >= 0.9 && control_z > 3.0,
        format!(
            "{below}/{total} borders with |z| < 3 ({:.0}%, max |z| {worst:.2}); hard-concatenation control z = {control_z:.2}",
            100.0 * fraction
        ),
    )
}

fn scalability(dir: &Path) -> Outcome {
    let ckpt = texsyn::cli::latest_checkpoint(&dir.join("run/checkpoints")).map_err(|e| e.to_string())?;
    let mut cfg = desk_config(dir, "large", TRAIN_STEPS, 1);
    cfg["synthesis"] = json!({"checkpoint": ckpt, "output_dims": [2 * TI_SIZE, 2 * TI_SIZE], "count": 1});
    let config = dir.join("large.json");
    write_json(&config, &cfg);
    cli(&["generate", "--config", config.to_str().unwrap()])?;
    let big = load_realizations(&dir.join("large"))?;
    let big = big.first().ok_or("no large realization")?;
    if big.dims() != [2 * TI_SIZE, 2 * TI_SIZE] {
        return Err(format!("large realization has dims {:?}", big.dims()));
    }
    let full = Cells::of(big);
    let (lo, n) = (TI_SIZE / 2, 2 * TI_SIZE);
    let window = Cells {
        d3: [1, TI_SIZE, TI_SIZE],
        on: (0..TI_SIZE * TI_SIZE).map(|i| full.on[(lo + i / TI_SIZE) * n + lo + i % TI_SIZE]).collect(),
    };
    let reals: Vec<Cells> = load_realizations(&dir.join("run"))?.iter().map(Cells::of).collect();
    let mut outside = Vec::new();
    for (name, axis) in [("x", 2), ("y", 1)] {
        let w = s2_axis(&window, axis, WINDOW_LAG, false);
        let members: Vec<Vec<f64>> = reals.iter().map(|c| s2_axis(c, axis, WINDOW_LAG, false)).collect();
        for r in 0..=WINDOW_LAG {
            let (mn, mx) = members.iter().map(|m| m[r]).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if w[r] < mn || w[r] > mx {
                outside.push(format!("{name} r={r}: {:.4} not in [{mn:.4}, {mx:.4}]", w[r]));
            }
        }
    }
    check(
        outside.is_empty(),
        if outside.is_empty() {
            format!(
                "{0}×{0} realization; central {1}² window S2 (x, y, r <= {WINDOW_LAG}) inside the band of {2} realizations",
                2 * TI_SIZE,
                TI_SIZE,
                reals.len()
            )
        } else {
            outside.join("; ")
        },
    )
}

fn throughput(dir: &Path) -> Outcome {
    let n = 128;
    let ti = channel_texture::<f32>(n, n, ChannelParams { channels: 8, ..ChannelParams::default() }, TI_SEED);
    save_texture(&ti, dir.join("ti128.png")).map_err(|e| e.to_string())?;
    let config = dir.join("bench.json");
    write_json(
        &config,
        &json!({
            "mode": "sagan",
            "ti_paths": [dir.join("ti128.png")],
            "out_dir": dir.join("bench"),
            "generator": {"lattice_dims": [16, 16], "filters": [32, 16, 8], "kernel": 5},
            "discriminator": {"input_dims": [64, 64], "filters": [8, 16, 32], "kernel": 5},
            "segment": [64, 64],
            "overlap": [0, 0],
            "training": {"batch_size": 8},
            "bench": {"steps": 150, "warmup": 50}
        }),
    );
    cli(&["bench", "--config", config.to_str().unwrap()])?;
    let csv = fs::read_to_string(dir.join("bench/bench.csv")).map_err(|e| e.to_string())?;
    let field = |model: &str, col: usize| -> f64 {
        csv.lines().find(|l| l.starts_with(model)).unwrap().split(',').nth(col).unwrap().parse().unwrap()
    };
    let (dc, sa) = (field("dcgan", 5), field("sagan", 5));
    let ratio = sa / dc;
    check(
        ratio < 1.0,
        format!(
            "128² output, 4 segments of 64²: median step DCGAN {:.1} ms, SAGAN {:.1} ms, ratio {ratio:.3} ({:+.1}%)",
            1e3 * dc,
            1e3 * sa,
            100.0 * (ratio - 1.0)
        ),
    )
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(dir: &Path) -> Outcome {
    for name in ["det_a", "det_b"] {
        let config = dir.join(format!("{name}.json"));
        write_json(&config, &desk_config(dir, name, 100, 5));
        pipeline(&config)?;
    }
    let (a, b) = (dir.join("det_a"), dir.join("det_b"));
    let files = csv_files(&a);
    if files != csv_files(&b) || files.len() < 2 {
        return Err(format!("CSV sets differ or are too small: {files:?}"));
    }
    for f in &files {
        if fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap() {
            return Err(format!("{} differs between reruns", f.display()));
        }
    }
    Ok(format!("{} CSV files byte-identical across two seeded runs", files.len()))
}

fn main() {
    let scratch = tempfile::tempdir().expect("temp dir");
    let dir = scratch.path();
    let ti = channel_texture::<f32>(TI_SIZE, TI_SIZE, ChannelParams::default(), TI_SEED);
    save_texture(&ti, dir.join("ti.png")).expect("write TI");

    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("loss equivalence", Box::new(loss_equivalence)),
        ("gradient correctness", Box::new(gradient_correctness)),
        ("segment arithmetic", Box::new(segment_arithmetic)),
        ("architecture table coverage", Box::new(architecture_table)),
        ("metric oracles", Box::new(metric_oracles)),
        ("single-TI diversity", Box::new(|| diversity(dir))),
        ("seam absence", Box::new(|| seam_absence(dir))),
        ("scalability", Box::new(|| scalability(dir))),
        ("throughput direction", Box::new(|| throughput(dir))),
        ("determinism", Box::new(|| determinism(dir))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
