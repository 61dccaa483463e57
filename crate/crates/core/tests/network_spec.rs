//! Network assembly: shape contracts, deterministic initialization,
//! parameter-count oracles, variant degeneracy, translation consistency,
//! the straight-line forward replay, and checkpoint round-trips.

mod support;

use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dynunet_core::network::{
    ArchitectureConfig, Components, Down, DownKind, NetworkState, Up, Variant,
};
use dynunet_core::{checkpoint, Shape, Tensor};

fn rand_t(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::rand_uniform(shape, -1.0, 1.0, &mut rng)
}

fn arch(variant: Variant, classes: usize, channels: Vec<usize>) -> ArchitectureConfig {
    ArchitectureConfig::new(variant, classes, channels)
}

const ALL: [Variant; 6] = [
    Variant::Unet,
    Variant::SconvUnet,
    Variant::DccUnet,
    Variant::DcdUnet,
    Variant::DcuUnet,
    Variant::DynamicUnet,
];

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

#[test]
fn same_seed_gives_identical_parameter_bytes() {
    for v in ALL {
        let cfg = arch(v, 3, vec![4, 8]);
        let a = NetworkState::<f32>::build(&cfg, 9).unwrap();
        let b = NetworkState::<f32>::build(&cfg, 9).unwrap();
        let pa = a.named_params();
        let pb = b.named_params();
        assert_eq!(pa.len(), pb.len());
        for ((na, ta), (nb, tb)) in pa.iter().zip(&pb) {
            assert_eq!(na, nb);
            assert_eq!(
                ta.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                tb.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}

#[test]
fn unknown_variant_diagnostic_lists_valid_names() {
    let err = Variant::from_str("resnet").unwrap_err();
    for name in ["unet", "sconv_unet", "dcc_unet", "dcd_unet", "dcu_unet", "dynamic_unet"] {
        assert!(err.to_string().contains(name), "{err}");
    }
}

fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

fn block_params(kind: dynunet_core::network::BlockKind, cin: usize, cout: usize) -> usize {
    match kind {
        dynunet_core::network::BlockKind::DoubleConv => {
            conv_params(cin, cout, 3) + conv_params(cout, cout, 3)
        }
        dynunet_core::network::BlockKind::Dcc => {
            conv_params(cin, cout, 1)
                + conv_params(cin, cout, 3)
                + conv_params(cin, cout, 3)
                + conv_params(cout, cout, 3)
                + (cout * cout + cout)
        }
    }
}

/// Closed-form parameter count derived independently from the wiring rules.
fn expected_params(cfg: &ArchitectureConfig) -> usize {
    let comps: Components = cfg.variant.components();
    let ch = &cfg.channels;
    let levels = ch.len();
    let mut total = 0;
    let mut prev = cfg.in_channels;
    for &c in ch.iter().take(levels - 1) {
        total += block_params(comps.block, prev, c);
        total += match comps.down {
            DownKind::MaxPool | DownKind::AvgPool => 0,
            DownKind::StridedConv => conv_params(c, c, 3),
            DownKind::Dcd => conv_params(c, 27, 3) + conv_params(c, c, 3),
        };
        prev = c;
    }
    total += block_params(comps.block, prev, ch[levels - 1]);
    for i in (0..levels - 1).rev() {
        let cin = if i == levels - 2 { ch[levels - 1] } else { ch[i + 1] };
        let cout = ch[i];
        total += match comps.up {
            dynunet_core::network::UpKind::TransposedConv => cin * cout * 4 + cout,
            dynunet_core::network::UpKind::Dcu => {
                cin * cout * 4 + cout + conv_params(2 * cout, 27, 3) + conv_params(cout, cout, 3)
            }
        };
        total += block_params(comps.block, 2 * cout, cout);
    }
    total + conv_params(ch[0], cfg.num_classes, 1)
}

#[test]
fn parameter_counts_match_closed_form_oracle() {
    for v in ALL {
        for channels in [vec![4, 8], vec![8, 16, 32], vec![32, 64, 128]] {
            let cfg = arch(v, 6, channels);
            let net = NetworkState::<f32>::build(&cfg, 0).unwrap();
            assert_eq!(net.param_count(), expected_params(&cfg), "variant {v}");
        }
    }
}

#[test]
fn dynamic_minus_unet_param_delta_is_module_sum() {
    let channels = vec![8, 16, 32];
    let base = expected_params(&arch(Variant::Unet, 4, channels.clone()));
    let dynamic = expected_params(&arch(Variant::DynamicUnet, 4, channels.clone()));
    // per-level extras computed straight from the module formulas
    let mut extras = 0usize;
    let ch = &channels;
    let mut prev = 1;
    for (i, &c) in ch.iter().take(ch.len() - 1).enumerate() {
        // DCC replaces the double conv (encoder block)
        extras += block_params(dynunet_core::network::BlockKind::Dcc, prev, c)
            - block_params(dynunet_core::network::BlockKind::DoubleConv, prev, c);
        // DCD replaces max pool
        extras += conv_params(c, 27, 3) + conv_params(c, c, 3);
        let _ = i;
        prev = c;
    }
    let last = ch[ch.len() - 1];
    extras += block_params(dynunet_core::network::BlockKind::Dcc, prev, last)
        - block_params(dynunet_core::network::BlockKind::DoubleConv, prev, last);
    for i in (0..ch.len() - 1).rev() {
        let cout = ch[i];
        // DCU adds offset + deform convs on top of the plain transposed conv
        extras += conv_params(2 * cout, 27, 3) + conv_params(cout, cout, 3);
        extras += block_params(dynunet_core::network::BlockKind::Dcc, 2 * cout, cout)
            - block_params(dynunet_core::network::BlockKind::DoubleConv, 2 * cout, cout);
    }
    assert_eq!(dynamic - base, extras);
}

#[test]
fn parameter_count_golden_values() {
    // frozen counts for the desk-scale configs (6 classes, 1 input channel)
    let cases: [(Variant, Vec<usize>, usize); 2] = [
        (Variant::Unet, vec![32, 64, 128], 466_118),
        (Variant::DynamicUnet, vec![32, 64, 128], 861_266),
    ];
    for (v, channels, want) in cases {
        let cfg = arch(v, 6, channels);
        let net = NetworkState::<f32>::build(&cfg, 0).unwrap();
        assert_eq!(net.param_count(), want, "variant {v}");
    }
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

#[test]
fn logits_shape_contract_for_all_variants() {
    for v in ALL {
        let cfg = arch(v, 5, vec![4, 8]);
        let net = NetworkState::<f64>::build(&cfg, 1).unwrap();
        let x = rand_t(Shape::nchw(1, 1, 64, 64), 2);
        let y = net.infer(&x).unwrap();
        assert_eq!(y.shape, Shape::nchw(1, 5, 64, 64), "variant {v}");
        assert!(y.data.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn small_unet_shape_example() {
    let cfg = arch(Variant::Unet, 3, vec![32, 64]);
    let net = NetworkState::<f64>::build(&cfg, 3).unwrap();
    let x = rand_t(Shape::nchw(1, 1, 8, 8), 4);
    let y = net.infer(&x).unwrap();
    assert_eq!(y.shape, Shape::nchw(1, 3, 8, 8));
}

#[test]
fn indivisible_extents_name_required_multiple() {
    let cfg = arch(Variant::Unet, 3, vec![4, 8, 16]);
    let net = NetworkState::<f64>::build(&cfg, 5).unwrap();
    let x = rand_t(Shape::nchw(1, 1, 10, 12), 6);
    let err = net.infer(&x).unwrap_err();
    assert!(err.to_string().contains('4'), "{err}");
}

#[test]
fn logits_finite_on_wide_range_inputs() {
    for v in ALL {
        let cfg = arch(v, 4, vec![4, 8]);
        let net = NetworkState::<f64>::build(&cfg, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::rand_uniform(Shape::nchw(2, 1, 16, 16), -3.0, 3.0, &mut rng);
        let y = net.infer(&x).unwrap();
        assert!(y.data.iter().all(|v| v.is_finite()), "variant {v}");
    }
}

#[test]
fn max_pool_variant_keeps_constant_features_constant() {
    // constant input stays spatially constant through every encoder stage;
    // logits of a constant image are spatially constant away from padding
    // effects only in the no-pad case, so check the pooled maps directly
    let x = support::t(1, 1, 8, 8, vec![0.7; 64]);
    let p = support::max_pool(&x, 2, 2);
    assert!(p.data.iter().all(|&v| v == 0.7));
    let a = support::avg_pool(&x, 2, 2);
    assert!(a.data.iter().all(|&v| (v - 0.7).abs() < 1e-15));
}

#[test]
fn forward_matches_straight_line_replay_on_all_variants() {
    for v in ALL {
        let cfg = arch(v, 3, vec![4, 8]);
        let mut net = NetworkState::<f64>::build(&cfg, 11).unwrap();
        // make the deformable paths live so the replay is non-trivial
        wake_offset_convs(&mut net);
        let x = rand_t(Shape::nchw(1, 1, 16, 16), 12);
        let got = net.infer(&x).unwrap();
        let want = support::network_replay(&net, &x);
        assert!(
            support::max_rel_diff(&got, &want) < 1e-10,
            "variant {v}: {}",
            support::max_rel_diff(&got, &want)
        );
    }
}

/// Give zero-initialized offset convs small random weights.
fn wake_offset_convs(net: &mut NetworkState<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(990);
    net.visit_params_mut(&mut |name, t| {
        if name.contains("offset") {
            *t = Tensor::rand_uniform(t.shape, -0.1, 0.1, &mut rng);
        }
    });
}

// ---------------------------------------------------------------------------
// degeneracy invariants
// ---------------------------------------------------------------------------

#[test]
fn dcd_variant_with_zero_deform_equals_avg_pool_network() {
    let cfg = arch(Variant::DcdUnet, 3, vec![4, 8, 16]);
    let mut net = NetworkState::<f64>::build(&cfg, 20).unwrap();
    for d in &mut net.downs {
        if let Down::Dcd(layer) = d {
            layer.deform.weight = Tensor::zeros(layer.deform.weight.shape);
            layer.deform.bias = Tensor::zeros(layer.deform.bias.shape);
        }
    }
    let mut avg = net.clone();
    for d in &mut avg.downs {
        *d = Down::AvgPool;
    }
    let x = rand_t(Shape::nchw(1, 1, 16, 16), 21);
    let a = net.infer(&x).unwrap();
    let b = avg.infer(&x).unwrap();
    assert!(support::max_abs_diff(&a, &b) < 1e-12);
}

#[test]
fn dcu_variant_degenerates_to_unet_with_extra_leaky_relu() {
    let cfg = arch(Variant::DcuUnet, 3, vec![4, 8]);
    let mut net = NetworkState::<f64>::build(&cfg, 22).unwrap();
    net.set_mask_one(true);
    for u in &mut net.ups {
        if let Up::Dcu(layer) = u {
            layer.deform.weight = Tensor::zeros(layer.deform.weight.shape);
            layer.deform.bias = Tensor::zeros(layer.deform.bias.shape);
            let cout = layer.cout;
            for co in 0..cout {
                layer.deform.weight.data[layer.deform.weight.shape.at(co, co, 1, 1)] = 1.0;
            }
        }
    }
    let x = rand_t(Shape::nchw(1, 1, 16, 16), 23);
    let got = net.infer(&x).unwrap();

    // expected: plain-unet decoding with a leaky relu inserted after each
    // upsample, evaluated with the independent oracle kernels only
    let mut skips = Vec::new();
    let mut cur = x.clone();
    for i in 0..1 {
        cur = support::block_replay(&net.enc_blocks[i], &cur);
        skips.push(cur.clone());
        cur = support::max_pool(&cur, 2, 2);
    }
    cur = support::block_replay(&net.bottleneck, &cur);
    for (d, i) in (0..1).rev().enumerate() {
        let Up::Dcu(layer) = &net.ups[d] else { panic!() };
        let up = support::conv_transpose2d(&cur, &layer.up.weight, &layer.up.bias.data);
        let aligned = support::leaky_relu(&up, layer.slope);
        let fused = support::concat_channels(&aligned, &skips[i]);
        cur = support::block_replay(&net.dec_blocks[d], &fused);
    }
    let want = support::conv2d(&cur, &net.head.weight, &net.head.bias.data, 1, 0);
    assert!(support::max_abs_diff(&got, &want) < 1e-12);
}

#[test]
fn translation_consistency_on_interior_pixels() {
    // A circular shift of the input should shift the output in lock-step.
    // Zero-padded convolutions perturb border rows, and because instance norm
    // uses global spatial statistics that perturbation leaks a small bias into
    // every logit, so exact equality is unattainable even far from the edges.
    // Smoke-check that the interior class decisions still move with the shift.
    let cfg = arch(Variant::Unet, 3, vec![4, 8]);
    let net = NetworkState::<f64>::build(&cfg, 24).unwrap();
    let x = rand_t(Shape::nchw(1, 1, 64, 64), 25);
    let mut shifted = Tensor::zeros(x.shape);
    for iy in 0..64 {
        for ix in 0..64 {
            shifted.data[x.shape.at(0, 0, iy, ix)] =
                x.data[x.shape.at(0, 0, (iy + 2) % 64, (ix + 2) % 64)];
        }
    }
    let a = net.infer(&x).unwrap();
    let b = net.infer(&shifted).unwrap();
    let argmax = |t: &Tensor<f64>, iy: usize, ix: usize| -> usize {
        (0..3)
            .max_by(|&p, &q| {
                t.data[t.shape.at(0, p, iy, ix)]
                    .total_cmp(&t.data[t.shape.at(0, q, iy, ix)])
            })
            .unwrap()
    };
    let mut agree = 0usize;
    let mut total = 0usize;
    let mut drift: f64 = 0.0;
    for iy in 16..48 {
        for ix in 16..48 {
            if argmax(&a, iy + 2, ix + 2) == argmax(&b, iy, ix) {
                agree += 1;
            }
            total += 1;
            for c in 0..3 {
                let va = a.data[a.shape.at(0, c, iy + 2, ix + 2)];
                let vb = b.data[b.shape.at(0, c, iy, ix)];
                drift = drift.max((va - vb).abs());
            }
        }
    }
    assert!(drift < 0.5, "interior logit drift too large: {drift}");
    assert!(
        agree * 100 >= total * 95,
        "interior argmax agreement {agree}/{total} below 95%"
    );
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

#[test]
fn checkpoint_roundtrip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for v in [Variant::Unet, Variant::DynamicUnet] {
        let cfg = arch(v, 4, vec![4, 8]);
        let mut net = NetworkState::<f32>::build(&cfg, 30).unwrap();
        net.step = 123;
        let path = dir.path().join(format!("{v}"));
        std::fs::create_dir_all(&path).unwrap();
        checkpoint::save(&path, &net).unwrap();
        let back: NetworkState<f32> = checkpoint::load(&path).unwrap();
        assert_eq!(back.step, 123);
        assert_eq!(back.config.variant, v);
        let pa = net.named_params();
        let pb = back.named_params();
        for ((na, ta), (nb, tb)) in pa.iter().zip(&pb) {
            assert_eq!(na, nb);
            assert_eq!(ta.data, tb.data);
        }
        // loaded checkpoints predict identically
        let x: Tensor<f32> = rand_t(Shape::nchw(1, 1, 16, 16), 31).cast();
        assert_eq!(net.infer(&x).unwrap().data, back.infer(&x).unwrap().data);
    }
}

#[test]
fn checkpoint_manifest_names_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = arch(Variant::Unet, 3, vec![4, 8]);
    let net = NetworkState::<f32>::build(&cfg, 32).unwrap();
    checkpoint::save(dir.path(), &net).unwrap();
    let manifest = checkpoint::load_manifest(dir.path()).unwrap();
    assert_eq!(manifest.params.len(), net.named_params().len());
    assert!(manifest.params.iter().any(|p| p.name == "head.w"));
}

