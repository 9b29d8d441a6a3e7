use entangle::metrics::*;
use entangle::trajstore::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Tasks = Vec<(String, Vec<Vec<Vec<f64>>>)>;

fn build(tasks: &Tasks) -> DemoDataset {
    let d = tasks[0].1[0][0].len();
    let tds = tasks
        .iter()
        .map(|(name, demos)| TaskDemos {
            name: name.clone(),
            demos: demos
                .iter()
                .enumerate()
                .map(|(i, rows)| FeatureTrajectory {
                    task_name: name.clone(),
                    demo_id: i as u64,
                    features: FrameMatrix::from_rows_f64(rows).unwrap(),
                    proprio: FrameMatrix::zeros(rows.len(), 1),
                    actions: FrameMatrix::zeros(rows.len(), 1),
                    success: true,
                })
                .collect(),
        })
        .collect();
    DemoDataset::new(tds, d, 1, 1).unwrap()
}

fn random_tasks(seed: u64) -> Tasks {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.gen_range(1..=8);
    (0..rng.gen_range(1..=3))
        .map(|t| {
            let demos = (0..rng.gen_range(1..=4))
                .map(|_| {
                    (0..rng.gen_range(2..=10))
                        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0) as f32 as f64).collect())
                        .collect()
                })
                .collect();
            (format!("t{t}"), demos)
        })
        .collect()
}

fn ocos(u: &[f64], v: &[f64]) -> f64 {
    let mut uv = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for i in 0..u.len() {
        uv += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    uv / (uu.sqrt() * vv.sqrt())
}

fn oracle_short(tasks: &Tasks) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    for (_, demos) in tasks {
        let d = demos[0][0].len();
        let mut mean = vec![0.0; d];
        let mut n = 0.0;
        for demo in demos {
            for f in demo {
                for j in 0..d {
                    mean[j] += f[j];
                }
                n += 1.0;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        for demo in demos {
            for t in 0..demo.len() - 1 {
                let a: Vec<f64> = (0..d).map(|j| demo[t][j] - mean[j]).collect();
                let b: Vec<f64> = (0..d).map(|j| demo[t + 1][j] - mean[j]).collect();
                sum += ocos(&a, &b);
                count += 1.0;
            }
        }
    }
    sum / count
}

fn oracle_long(tasks: &Tasks, per_frame_divisor: bool) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    let mut per_frame = 0.0;
    let mut demos_seen = 0.0;
    for (_, demos) in tasks {
        for demo in demos {
            let mut s = 0.0;
            for i in 0..demo.len() {
                for j in 0..demo.len() {
                    if i != j {
                        s += ocos(&demo[i], &demo[j]);
                        count += 1.0;
                    }
                }
            }
            sum += s;
            per_frame += s / demo.len() as f64;
            demos_seen += 1.0;
        }
    }
    if per_frame_divisor {
        per_frame / demos_seen
    } else {
        sum / count
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn metrics_match_nested_loop_oracle(seed in any::<u64>()) {
        let tasks = random_tasks(seed);
        let ds = build(&tasks);
        let short = short_range_entanglement(&ds, true, 1).unwrap();
        let long = long_range_entanglement(&ds, Normalization::Pairs, false).unwrap();
        let literal = long_range_entanglement(&ds, Normalization::Paper, false).unwrap();
        prop_assert!((short.value - oracle_short(&tasks)).abs() < 1e-9);
        prop_assert!((long.value - oracle_long(&tasks, false)).abs() < 1e-9);
        prop_assert!((literal.value - oracle_long(&tasks, true)).abs() < 1e-9);
        let r = entanglement_report(&ds, &MetricOptions::default()).unwrap();
        prop_assert_eq!(r.combined, r.short_range * r.long_range);
    }

    #[test]
    fn cosine_symmetric_and_scale_free(
        u in prop::collection::vec(-5.0f64..5.0, 4),
        v in prop::collection::vec(-5.0f64..5.0, 4),
        a in 0.01f64..100.0,
        b in 0.01f64..100.0,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let c = cosine(&u, &v).unwrap();
        prop_assert!((c - cosine(&v, &u).unwrap()).abs() < 1e-12);
        let us: Vec<f64> = u.iter().map(|x| x * a).collect();
        let vs: Vec<f64> = v.iter().map(|x| x * b).collect();
        prop_assert!((c - cosine(&us, &vs).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_demo_and_task_order(seed in any::<u64>()) {
        let tasks = random_tasks(seed);
        let mut shuffled = tasks.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        shuffled.shuffle(&mut rng);
        for (_, demos) in shuffled.iter_mut() {
            demos.shuffle(&mut rng);
        }
        let (a, b) = (build(&tasks), build(&shuffled));
        let sa = short_range_entanglement(&a, true, 1).unwrap().value;
        let sb = short_range_entanglement(&b, true, 1).unwrap().value;
        let la = long_range_entanglement(&a, Normalization::Pairs, false).unwrap().value;
        let lb = long_range_entanglement(&b, Normalization::Pairs, false).unwrap().value;
        prop_assert!((sa - sb).abs() < 1e-12);
        prop_assert!((la - lb).abs() < 1e-12);
    }

    #[test]
    fn frame_shuffle_moves_short_but_not_long(seed in any::<u64>(), n in 8usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 4;
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ramp: Vec<Vec<f64>> = (0..n)
            .map(|t| {
                let s = t as f64 / n as f64;
                (0..d).map(|j| a[j] + s * b[j] + s * s * c[j]).collect()
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        let reversed: Vec<usize> = (0..n).rev().collect();
        loop {
            order.shuffle(&mut rng);
            if order.windows(2).any(|w| w[1] != w[0] + 1) && order != reversed {
                break;
            }
        }
        let shuffled: Vec<Vec<f64>> = order.iter().map(|&i| ramp[i].clone()).collect();
        let x = build(&vec![("t".into(), vec![ramp])]);
        let y = build(&vec![("t".into(), vec![shuffled])]);
        let long_x = long_range_entanglement(&x, Normalization::Pairs, false).unwrap().value;
        let long_y = long_range_entanglement(&y, Normalization::Pairs, false).unwrap().value;
        prop_assert!((long_x - long_y).abs() < 1e-12);
        let sx = short_range_entanglement(&x, true, 1).unwrap().value;
        let sy = short_range_entanglement(&y, true, 1).unwrap().value;
        prop_assert!((sx - sy).abs() > 0.01, "{} vs {}", sx, sy);
    }

    #[test]
    fn pca_is_translation_invariant(seed in any::<u64>(), shift in -10.0f64..10.0) {
        let tasks = random_tasks(seed);
        let rows = &tasks[0].1[0];
        prop_assume!(rows.len() >= 3);
        let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x + shift).collect()).collect();
        let p = pca_project(&build(&vec![("t".into(), vec![rows.clone()])]).demos().next().unwrap().clone(), 2).unwrap();
        let q = pca_project(&build(&vec![("t".into(), vec![moved])]).demos().next().unwrap().clone(), 2).unwrap();
        for (a, b) in p.scores.iter().flatten().zip(q.scores.iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-4, "{} {}", a, b);
        }
    }
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

#[test]
fn pca_variances_match_covariance_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (n, d) = (10, 50);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect())
        .collect();
    let traj = build(&vec![("t".into(), vec![rows.clone()])]).demos().next().unwrap().clone();
    let p = pca_project(&traj, n - 1).unwrap();
    assert!(!p.rank_deficient);

    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect();
    let ev = jacobi_eigenvalues(cov);
    for k in 0..n - 1 {
        assert!((p.variances[k] - ev[k]).abs() < 1e-8, "{k}: {} vs {}", p.variances[k], ev[k]);
        let col: Vec<f64> = p.scores.iter().map(|r| r[k]).collect();
        let var = col.iter().map(|x| x * x).sum::<f64>() / (n - 1) as f64;
        assert!((var - ev[k]).abs() < 1e-8);
    }
    assert!(ev[n - 1].abs() < 1e-8);
}
