use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segkit::zoo::{bce_loss, bce_loss_graph, build_model, family_loss, ArchitectureConfig, AuxKind, Family, Model};
use segkit::{Error, Tensor};
use segtensor::kernels::{max_pool2x2, max_unpool2x2};

fn config(f: Family) -> ArchitectureConfig {
    ArchitectureConfig::new(f).with_base_channels(4)
}

fn random_batch(n: usize, s: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, 3, s, s], |_| rng.gen::<f64>())
}

fn random_mask(n: usize, s: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::zeros(&[n, 1, s, s]);
    for b in 0..n {
        let (r0, c0) = (rng.gen_range(0..s / 2), rng.gen_range(0..s / 2));
        let (h, w) = (rng.gen_range(4..s / 2), rng.gen_range(4..s / 2));
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                t.data_mut()[(b * s + r) * s + c] = 1.0;
            }
        }
    }
    t
}

#[test]
fn primary_shape_for_every_family_and_size() {
    for f in Family::ALL {
        let m: Model<f32> = build_model(&config(f), 1).unwrap();
        for s in [32, 64, 224] {
            let x = random_batch(2, s, 3).cast::<f32>();
            let out = m.forward(&x).unwrap();
            assert_eq!(out.primary.shape(), &[2, 1, s, s], "{f} at {s}");
            assert!(out.primary.data().iter().all(|&p| p > 0.0 && p < 1.0), "{f} at {s}");
            assert_eq!(out.aux.len(), f.aux_count());
        }
    }
}

#[test]
fn auxiliary_outputs_declare_their_scale() {
    let mc: Model<f32> = build_model(&config(Family::McFcn), 0).unwrap();
    let out = mc.forward(&Tensor::zeros(&[1, 3, 64, 64])).unwrap();
    let scales: Vec<usize> = out.aux.iter().map(|a| a.scale).collect();
    assert_eq!(scales, vec![1, 2, 4, 8]);
    for a in &out.aux {
        assert_eq!(a.kind, AuxKind::Scale);
        assert_eq!(a.map.shape(), &[1, 1, 64 / a.scale, 64 / a.scale]);
    }

    let br: Model<f32> = build_model(&config(Family::BrNet), 0).unwrap();
    let out = br.forward(&Tensor::zeros(&[1, 3, 64, 64])).unwrap();
    assert_eq!(out.primary.shape(), &[1, 1, 64, 64]);
    assert_eq!(out.aux.len(), 1);
    assert_eq!(out.aux[0].kind, AuxKind::Boundary);
    assert_eq!(out.aux[0].map.shape(), &[1, 1, 64, 64]);
}

#[test]
fn eval_forward_is_deterministic_and_seeded() {
    for f in [Family::UNet, Family::SegNet, Family::Fpn] {
        let x = random_batch(2, 32, 9).cast::<f32>();
        let a: Model<f32> = build_model(&config(f), 5).unwrap();
        let b: Model<f32> = build_model(&config(f), 5).unwrap();
        let c: Model<f32> = build_model(&config(f), 6).unwrap();
        let ya = a.forward(&x).unwrap().primary;
        assert_eq!(ya.data(), a.forward(&x).unwrap().primary.data());
        assert_eq!(ya.data(), b.forward(&x).unwrap().primary.data());
        assert_ne!(ya.data(), c.forward(&x).unwrap().primary.data());
    }
}

#[test]
fn wrong_spatial_size_is_rejected() {
    let m: Model<f32> = build_model(&config(Family::Fcn32s), 0).unwrap();
    assert!(matches!(
        m.forward(&Tensor::zeros(&[1, 3, 40, 64])),
        Err(Error::InvalidSpatialSize(40))
    ));
}

#[test]
fn one_step_reaches_nearly_every_parameter() {
    for f in Family::ALL {
        let mut m: Model<f64> = build_model(&config(f), 11).unwrap();
        let x = random_batch(2, 32, 12);
        let t = random_mask(2, 32, 13);
        let pass = m.forward_train(&x).unwrap();
        family_loss(m.config(), &pass.outputs, &t).unwrap().backward();
        let grads = pass.gradients();
        let nonzero = grads.values().filter(|g| g.max_abs() > 0.0).count();
        let frac = nonzero as f64 / grads.len() as f64;
        let dead: Vec<&String> = grads
            .iter()
            .filter(|(_, g)| g.max_abs() == 0.0)
            .map(|(k, _)| k)
            .collect();
        assert!(frac >= 0.99, "{f}: {nonzero}/{} nonzero, zero: {dead:?}", grads.len());
    }
}

#[test]
fn every_weighted_head_receives_gradient() {
    let x = random_batch(2, 32, 21);
    let t = random_mask(2, 32, 22);
    for (j, side) in ["dec1", "dec2", "dec3", "dec4"].iter().enumerate() {
        let mut cfg = config(Family::McFcn);
        cfg.mc_head_weights = vec![0.0; 5];
        cfg.mc_head_weights[j + 1] = 1.0;
        let mut m: Model<f64> = build_model(&cfg, 3).unwrap();
        let pass = m.forward_train(&x).unwrap();
        family_loss(&cfg, &pass.outputs, &t).unwrap().backward();
        let g = pass.gradients();
        let name = format!("MCFCN/{side}/side/weight");
        assert!(g[&name].max_abs() > 0.0, "{name}");
        assert_eq!(g["MCFCN/head/fuse/weight"].max_abs(), 0.0);
    }

    let mut cfg = config(Family::BrNet);
    cfg.br_loss_weights = (0.0, 1.0);
    let mut m: Model<f64> = build_model(&cfg, 3).unwrap();
    let pass = m.forward_train(&x).unwrap();
    family_loss(&cfg, &pass.outputs, &t).unwrap().backward();
    let g = pass.gradients();
    assert!(g["BRNet/head/boundary/weight"].max_abs() > 0.0);
    assert_eq!(g["BRNet/head/mask/weight"].max_abs(), 0.0);
}

/// Central difference of the eval-mode BCE loss in one parameter element.
fn central_difference(m: &mut Model<f64>, x: &Tensor<f64>, t: &Tensor<f64>, name: &str, idx: usize, h: f64) -> f64 {
    let orig = m.params()[name].data()[idx];
    let mut loss_at = |v: f64| {
        m.params_mut().get_mut(name).unwrap().data_mut()[idx] = v;
        let p = m.forward(x).unwrap().primary;
        bce_loss(&p, t).unwrap()
    };
    let up = loss_at(orig + h);
    let down = loss_at(orig - h);
    loss_at(orig);
    (up - down) / (2.0 * h)
}

fn close(numeric: f64, analytic: f64) -> bool {
    (numeric - analytic).abs() <= 1e-2 * numeric.abs().max(analytic.abs()) + 1e-9
}

// A step of 1e-3 can straddle a ReLU or max-pool kink somewhere in a 32x32
// map. Such a sample must still agree at a step far below the kink spacing,
// and at most two of the ten may need that.
#[test]
fn gradients_match_central_differences() {
    for f in Family::ALL {
        let mut m: Model<f64> = build_model(&config(f), 31).unwrap();
        let x = random_batch(1, 32, 32);
        let t = random_mask(1, 32, 33);
        let pass = m.forward_tracked(&x, false).unwrap();
        bce_loss_graph(&pass.outputs.primary, &t).unwrap().backward();
        let grads = pass.gradients();
        drop(pass);

        let names: Vec<String> = m.params().keys().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut kinked = 0;
        for _ in 0..10 {
            let name = &names[rng.gen_range(0..names.len())];
            let idx = rng.gen_range(0..m.params()[name].len());
            let analytic = grads[name].data()[idx];
            let numeric = central_difference(&mut m, &x, &t, name, idx, 1e-3);
            if close(numeric, analytic) {
                continue;
            }
            kinked += 1;
            let fine = central_difference(&mut m, &x, &t, name, idx, 1e-6);
            assert!(
                close(fine, analytic),
                "{f} {name}[{idx}]: analytic {analytic} numeric {numeric} / {fine}"
            );
        }
        assert!(kinked <= 2, "{f}: {kinked} of 10 samples disagree at step 1e-3");
    }
}

#[test]
fn encoder_convolutions_are_normalized() {
    for f in [
        Family::Fpn,
        Family::SegNet,
        Family::ResUNet,
        Family::McFcn,
        Family::BrNet,
        Family::UNet,
    ] {
        let m: Model<f32> = build_model(&config(f), 0).unwrap();
        for stage in 1..=5 {
            let prefix = format!("{}/enc{stage}/", f.name());
            let convs = m
                .params()
                .iter()
                .filter(|(k, v)| k.starts_with(&prefix) && k.ends_with("/weight") && v.ndim() == 4)
                .count();
            let norms = m
                .params()
                .keys()
                .filter(|k| k.starts_with(&prefix) && k.ends_with("/gamma"))
                .count();
            assert!(convs > 0, "{prefix}");
            assert!(norms >= convs, "{prefix}: {convs} convs, {norms} norms");
        }
    }
    for f in [Family::Fcn32s, Family::Fcn16s, Family::Fcn8s] {
        let m: Model<f32> = build_model(&config(f), 0).unwrap();
        assert!(m.params().keys().all(|k| !k.ends_with("/gamma")), "{f}");
    }
}

#[test]
fn unpooling_restores_window_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..20 {
        // Small integer range forces ties.
        let x = Tensor::<f64>::from_fn(&[1, 2, 8, 8], |_| rng.gen_range(0..6) as f64);
        let (pooled, idx) = max_pool2x2(&x);
        let restored = max_unpool2x2(&pooled, &idx);
        for c in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let mut best = (0, 0);
                    let mut v = f64::NEG_INFINITY;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let val = x.data()[(c * 8 + 2 * i + di) * 8 + 2 * j + dj];
                            if val > v {
                                v = val;
                                best = (di, dj);
                            }
                        }
                    }
                    for di in 0..2 {
                        for dj in 0..2 {
                            let got = restored.data()[(c * 8 + 2 * i + di) * 8 + 2 * j + dj];
                            let want = if (di, dj) == best { v } else { 0.0 };
                            assert_eq!(got, want);
                        }
                    }
                }
            }
        }
    }
}
