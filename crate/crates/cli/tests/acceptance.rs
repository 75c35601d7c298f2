//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Training criteria run the `epnkit` binary itself.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use epnkit_cli::audit::{group_axiom_checks, run_audit, AuditOptions, AuditReport};
use epnkit_cli::bench::{run_bench, BenchOptions};
use epnkit_core::geom::random_rotation;
use epnkit_core::group::{FiniteRotationGroup, GroupKind};
use epnkit_core::sampling::PointCloud;
use epnkit_core::train::{
    bar_triple, check_network_gradients, check_operator_gradients, l_shape, HeadKind, Pooling, Target, ToyNetwork,
    TrainConfig,
};

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn epnkit(args: &[&str]) -> Output {
    let o = Command::new(env!("CARGO_BIN_EXE_epnkit"))
        .args(args)
        .env_remove("EPNKIT_THREADS")
        .output()
        .expect("spawn epnkit");
    if !o.status.success() {
        eprintln!("epnkit {args:?} exited with {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    }
    o
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("JSON report on stdout")
}

fn children_cpu() -> Duration {
    let mut usage = std::mem::MaybeUninit::<libc::rusage>::zeroed();
    // SAFETY: getrusage fills the struct it is given.
    let usage = unsafe {
        assert_eq!(libc::getrusage(libc::RUSAGE_CHILDREN, usage.as_mut_ptr()), 0);
        usage.assume_init()
    };
    let tv = |t: libc::timeval| Duration::new(t.tv_sec as u64, t.tv_usec as u32 * 1000);
    tv(usage.ru_utime) + tv(usage.ru_stime)
}

fn small_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/small.cfg").to_str().unwrap().to_string()
}

fn checks_within(report: &AuditReport, prefix: &str, limit: f64, strict: bool) -> Verdict {
    let selected: Vec<_> = report.checks.iter().filter(|c| c.name.starts_with(prefix)).collect();
    let worst = selected.iter().map(|c| c.deviation).fold(0.0, f64::max);
    let ok = !selected.is_empty()
        && selected
            .iter()
            .all(|c| if strict { c.deviation < limit } else { c.deviation <= limit });
    let names: Vec<&str> = selected.iter().map(|c| c.name.as_str()).collect();
    ensure(ok, format!("{names:?} max deviation {worst:e} (limit {limit:e})"))
}

fn groups() -> Verdict {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for kind in GroupKind::ALL {
        let group = FiniteRotationGroup::build(kind).map_err(|e| e.to_string())?;
        let checks = group_axiom_checks(&group);
        let ortho = checks.iter().find(|c| c.name == "group.orthogonality").unwrap().deviation;
        ok &= group.order() == kind.order() && checks.iter().all(|c| c.pass) && ortho < 1e-12;
        details.push(format!("{} |G|={} ortho {ortho:.1e}", kind.name(), group.order()));
    }
    let elapsed = start.elapsed();
    ensure(ok && elapsed < Duration::from_secs(5), format!("{} in {elapsed:.2?}", details.join(", ")))
}

fn rotation_equivariance(icosa: &AuditReport, elapsed: Duration) -> Verdict {
    let mut worst = 0.0f64;
    let mut ok = true;
    for name in ["equivariance.point_conv", "equivariance.group_conv", "equivariance.spconv_stack"] {
        let c = icosa.check(name).ok_or(format!("missing {name}"))?;
        worst = worst.max(c.deviation);
        ok &= c.deviation < 1e-9;
    }
    ensure(
        ok && elapsed < Duration::from_secs(60),
        format!("icosahedral, N=128, D=8, all 60 elements: max deviation {worst:e}, audit took {elapsed:.2?}"),
    )
}

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let ops = check_operator_gradients(11).map_err(|e| e.to_string())?;
    let worst_op = ops
        .iter()
        .max_by(|a, b| a.report.max_rel_err.total_cmp(&b.report.max_rel_err))
        .unwrap();
    let mut ok = ops.iter().all(|o| o.report.passes(1e-4));
    let cfg = TrainConfig {
        group: GroupKind::Tetrahedral,
        points: 24,
        k_max: vec![6, 6],
        channels: vec![3, 4],
        kernel_points: 4,
        group_neighbors: 3,
        hidden: 5,
        ..TrainConfig::default()
    };
    let mut kinds = vec![HeadKind::Detection, HeadKind::Baseline];
    for pooling in [Pooling::Attentive, Pooling::Max, Pooling::Mean] {
        kinds.push(HeadKind::Classifier { pooling, classes: 2 });
    }
    let mut worst_model = 0.0f64;
    for (i, kind) in kinds.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let net = ToyNetwork::new(&cfg, kind, &mut rng).map_err(|e| e.to_string())?;
        let batch: Vec<(PointCloud, Target)> = (0..2)
            .map(|j| {
                let cloud = if j == 0 { bar_triple(cfg.points, 0.05, 7 + i as u64) } else { l_shape(cfg.points, 0.05, 9) };
                let target = match kind {
                    HeadKind::Classifier { .. } => Target::Class(j),
                    _ => Target::Rotation(random_rotation(&mut rng)),
                };
                (cloud.rotated(&random_rotation(&mut rng)), target)
            })
            .collect();
        let report = check_network_gradients(&net, &batch, cfg.lambda).map_err(|e| e.to_string())?;
        ok &= report.passes(1e-4);
        worst_model = worst_model.max(report.max_rel_err);
    }
    let elapsed = start.elapsed();
    ensure(
        ok && elapsed < Duration::from_secs(120),
        format!(
            "{} operator checks, worst {} at {:.2e}; 5 full models, worst {worst_model:.2e}; {elapsed:.2?}",
            ops.len(),
            worst_op.op,
            worst_op.report.max_rel_err
        ),
    )
}

fn complexity() -> Verdict {
    let sweep = run_bench(&BenchOptions { dry: true, ..BenchOptions::default() }).map_err(|e| e.to_string())?;
    let timed = run_bench(&BenchOptions {
        kernel_points: vec![8],
        group_neighbors: vec![8],
        ..BenchOptions::default()
    })
    .map_err(|e| e.to_string())?;
    let speedup = timed.rows[0].speedup.unwrap_or(f64::NAN);
    let soft = if speedup >= 2.0 { "met" } else { "not met (soft)" };
    ensure(
        sweep.pass && sweep.rows.len() == 16,
        format!(
            "{}/16 ratios exact over K_p, K_g in {{2,4,8,16}}; K_p=K_g=8 ratio {}; wall-clock speedup {speedup:.2}x, {soft}",
            sweep.rows.iter().filter(|r| r.ratio_exact).count(),
            sweep.rows.iter().find(|r| r.k_p == 8 && r.k_g == 8).map_or(f64::NAN, |r| r.mac_ratio)
        ),
    )
}

fn ga_invariance(cls: &Value) -> Verdict {
    let variants = cls["variants"].as_array().ok_or("no variants")?;
    let att = variants.iter().find(|v| v["pooling"] == "attentive").ok_or("no attentive variant")?;
    let d = att["invariance"]["max_descriptor_deviation"].as_f64().ok_or("no deviation")?;
    let rotations = &att["invariance"]["rotations"];
    ensure(d < 1e-6, format!("trained attentive classifier, {rotations} group rotations: max descriptor deviation {d:e}"))
}

fn classification(cls: &Value) -> Verdict {
    let variants = cls["variants"].as_array().ok_or("no variants")?;
    let acc: Vec<(String, f64)> = variants
        .iter()
        .map(|v| (v["pooling"].as_str().unwrap_or("?").to_string(), v["accuracy"].as_f64().unwrap_or(0.0)))
        .collect();
    let ok = acc.len() == 3 && acc.iter().all(|(_, a)| *a > 0.95);
    ensure(ok, format!("accuracy {acc:?} on {} held-out clouds", cls["test_samples"]))
}

fn pose() -> Verdict {
    let before = children_cpu();
    let o = epnkit(&["train", "pose"]);
    let cpu = children_cpu() - before;
    if !o.status.success() {
        return Err(format!("train pose exited with {:?}", o.status.code()));
    }
    let r = json(&o);
    let stat = |head: &str, phase: &str, field: &str| r[head][phase][field].as_f64().unwrap_or(f64::NAN);
    let median = stat("detection", "trained", "median_deg");
    let max = stat("detection", "trained", "max_deg");
    let untrained = stat("detection", "untrained", "median_deg");
    let baseline = stat("baseline", "trained", "median_deg");
    let ok = median < 10.0 && max < 40.0 && untrained > 20.0 && baseline >= 2.0 * median && cpu.as_secs_f64() <= 300.0;
    ensure(
        ok,
        format!(
            "median {median:.2} deg, max {max:.2} deg over {} rotations; untrained median {untrained:.1}; baseline median {baseline:.1} ({:.1}x); {:.0} CPU-s",
            r["eval_rotations"],
            baseline / median,
            cpu.as_secs_f64()
        ),
    )
}

fn determinism() -> Verdict {
    let cfg = small_config();
    let runs: [&[&str]; 4] = [
        &["audit"],
        &["bench", "--dry"],
        &["train", "pose", "--config", &cfg],
        &["train", "cls", "--config", &cfg],
    ];
    let mut same = Vec::new();
    let mut ok = true;
    for args in runs {
        let full: Vec<&str> = ["--seed", "5", "--threads", "1"].iter().copied().chain(args.iter().copied()).collect();
        let a = epnkit(&full);
        let b = epnkit(&full);
        let identical = a.status.success() && a.stdout == b.stdout && !a.stdout.is_empty();
        ok &= identical;
        same.push(format!("{}: {}", args[..args.len().min(2)].join(" "), if identical { "identical" } else { "DIFFERS" }));
    }
    ensure(ok, same.join(", "))
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, verdict: std::thread::Result<Verdict>| {
        let (tag, detail) = match verdict {
            Ok(Ok(d)) => ("PASS", d),
            Ok(Err(d)) => ("FAIL", d),
            Err(_) => ("FAIL", "panicked".to_string()),
        };
        if tag == "FAIL" {
            failures += 1;
        }
        println!("{tag} {name}: {detail}");
    };

    report("group correctness", catch_unwind(groups));

    let start = Instant::now();
    let icosa = run_audit(&AuditOptions {
        group: GroupKind::Icosahedral,
        points: 128,
        channels: 8,
        ..AuditOptions::default()
    });
    let icosa_elapsed = start.elapsed();
    let tetra = run_audit(&AuditOptions::default());
    match (&icosa, &tetra) {
        (Ok(icosa), Ok(tetra)) => {
            report("rotation equivariance", catch_unwind(|| rotation_equivariance(icosa, icosa_elapsed)));
            report(
                "translation equivariance",
                catch_unwind(|| {
                    checks_within(icosa, "translation.", 0.0, false)
                        .and_then(|a| checks_within(tetra, "translation.", 0.0, false).map(|b| format!("icosa {a}; tetra {b}")))
                }),
            );
            report("separability oracle", catch_unwind(|| checks_within(tetra, "separability.", 1e-12, true)));
        }
        _ => {
            let msg = format!("audit error: {:?} / {:?}", icosa.as_ref().err(), tetra.as_ref().err());
            for name in ["rotation equivariance", "translation equivariance", "separability oracle"] {
                report(name, Ok(Err(msg.clone())));
            }
        }
    }

    report("complexity (MAC ratio)", catch_unwind(complexity));
    report("gradient fidelity", catch_unwind(gradient_fidelity));

    let cls = epnkit(&["train", "cls"]);
    let cls_json = catch_unwind(AssertUnwindSafe(|| json(&cls)));
    match cls_json {
        Ok(r) if cls.status.success() => {
            report("GA pooling invariance", catch_unwind(|| ga_invariance(&r)));
            report("classification ablation", catch_unwind(|| classification(&r)));
        }
        _ => {
            let msg = format!("train cls exited with {:?}", cls.status.code());
            report("GA pooling invariance", Ok(Err(msg.clone())));
            report("classification ablation", Ok(Err(msg)));
        }
    }

    report("pose estimation", catch_unwind(pose));
    report("determinism", catch_unwind(determinism));

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
