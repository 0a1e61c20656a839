mod common;

use common::*;
use fvsrn_core::activation::Activation;
use fvsrn_core::fourier::FourierMode;
use fvsrn_core::mlp::Mlp;
use fvsrn_core::model::{
    DirectionEncoding, FourierConfig, FvsrnModel, GridConfig, Head, ModelConfig, TemporalConfig,
    TimeEncoding,
};
use fvsrn_core::render::{ModelSource, RenderSettings};
use fvsrn_core::tf::TransferFunction;

fn small(head: Head, grid: Option<(usize, usize)>) -> ModelConfig {
    ModelConfig {
        head,
        layers: 2,
        channels: 32,
        grid: grid.map(|(resolution, channels)| GridConfig {
            resolution,
            channels,
        }),
        seed: 3,
        ..ModelConfig::default()
    }
}

/// Grids start tiny; spread them so their gradients are not all alike.
fn perturb_grids(model: &mut FvsrnModel, seed: u64) {
    let mut r = rng(seed);
    for g in model.latent_mut().grids_mut() {
        for v in g.values_mut() {
            *v += rand::Rng::random_range(&mut r, -0.5..0.5);
        }
    }
}

#[test]
fn mlp_matches_central_differences_in_f64() {
    for act in Activation::ALL {
        let mlp = Mlp::init(4, 48, 10, 3, act, 11).unwrap().cast::<f64>();
        let x: Vec<f64> = random_weights(8 * 10, 1)
            .iter()
            .map(|&v| v as f64)
            .collect();
        let w: Vec<f64> = random_weights(8 * 3, 2).iter().map(|&v| v as f64).collect();
        let a = check_mlp(&mlp, &x, 8, &w, 1e-6, 1e-5);
        assert!(a.fraction() >= 0.99, "{act:?}: {a:?}");
    }
}

#[test]
fn mlp_matches_central_differences_in_f32() {
    for act in Activation::ALL {
        let mlp = Mlp::init(4, 32, 10, 3, act, 12).unwrap();
        let x = random_weights(8 * 10, 3);
        let w = random_weights(8 * 3, 4);
        // small steps only where a kink is nearby; otherwise f32 rounding dominates
        let h = if act == Activation::Relu { 1e-3 } else { 1e-2 };
        let a = check_mlp(&mlp, &x, 8, &w, h, 1e-2);
        assert!(a.fraction() >= 0.95, "{act:?}: {a:?}");
    }
}

#[test]
fn density_model_joint_gradients() {
    let mut model = FvsrnModel::new(small(Head::Density, Some((4, 4)))).unwrap();
    perturb_grids(&mut model, 5);
    let q = Query::new(&model, 64, 6);
    let w = random_weights(64, 7);
    let (_, grads) = head_loss_and_grads(&model, &q, &w);
    let probes = all_params(&mut model);
    let a = check_params(&mut model, &grads, &probes, 1e-2, 1e-2, |m| {
        head_loss(m, &q, &w)
    });
    assert!(a.fraction() >= 0.95, "{a:?}");
}

#[test]
fn color_model_with_direction_fourier() {
    let cfg = ModelConfig {
        direction: DirectionEncoding::DirF,
        ..small(Head::Color, Some((4, 4)))
    };
    let mut model = FvsrnModel::new(cfg).unwrap();
    perturb_grids(&mut model, 8);
    let q = Query::new(&model, 48, 9);
    let w = random_weights(48 * 4, 10);
    let (_, grads) = head_loss_and_grads(&model, &q, &w);
    let probes = sampled_params(&mut model, 600, 1);
    let a = check_params(&mut model, &grads, &probes, 1e-2, 1e-2, |m| {
        head_loss(m, &q, &w)
    });
    assert!(a.fraction() >= 0.95, "{a:?}");
}

#[test]
fn keyframe_grids_receive_interpolated_gradients() {
    let cfg = ModelConfig {
        temporal: Some(TemporalConfig {
            encoding: TimeEncoding::Both,
            keyframes: vec![0, 10, 20],
            span: [0, 20],
            ..TemporalConfig::default()
        }),
        ..small(Head::Density, Some((4, 2)))
    };
    let mut model = FvsrnModel::new(cfg).unwrap();
    perturb_grids(&mut model, 11);
    let q = Query::new(&model, 64, 12);
    let w = random_weights(64, 13);
    let (_, grads) = head_loss_and_grads(&model, &q, &w);
    let probes = sampled_params(&mut model, 600, 2);
    let a = check_params(&mut model, &grads, &probes, 1e-2, 1e-2, |m| {
        head_loss(m, &q, &w)
    });
    assert!(a.fraction() >= 0.95, "{a:?}");
}

#[test]
fn renderer_end_to_end_density() {
    let mut model = FvsrnModel::new(ModelConfig {
        fourier: FourierConfig {
            mode: FourierMode::Nerf,
            features: Some(6),
            ..FourierConfig::default()
        },
        ..small(Head::Density, Some((4, 4)))
    })
    .unwrap();
    perturb_grids(&mut model, 14);
    let tf = TransferFunction::ramp(8.0);
    let rays = random_rays(12, 15);
    let settings = RenderSettings {
        stepsize: 1.0 / 24.0,
        ..RenderSettings::default()
    };
    let w: Vec<[f32; 4]> = random_weights(12 * 4, 16)
        .chunks(4)
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect();
    let grads = {
        let src = ModelSource {
            tf: Some(&tf),
            ..ModelSource::new(&model)
        };
        render_grads(&src, &rays, &settings, &w)
    };
    let probes = sampled_params(&mut model, 300, 3);
    let a = check_params(&mut model, &grads, &probes, 1e-2, 1e-2, |m| {
        let src = ModelSource {
            tf: Some(&tf),
            ..ModelSource::new(m)
        };
        render_loss(&src, &rays, &settings, &w)
    });
    assert!(a.fraction() >= 0.95, "{a:?}");
}

#[test]
fn renderer_end_to_end_color() {
    let cfg = ModelConfig {
        direction: DirectionEncoding::DirP,
        ..small(Head::Color, Some((4, 4)))
    };
    let mut model = FvsrnModel::new(cfg).unwrap();
    perturb_grids(&mut model, 17);
    let rays = random_rays(12, 18);
    let settings = RenderSettings {
        stepsize: 1.0 / 24.0,
        ..RenderSettings::default()
    };
    let w: Vec<[f32; 4]> = random_weights(12 * 4, 19)
        .chunks(4)
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect();
    let grads = render_grads(&ModelSource::new(&model), &rays, &settings, &w);
    let probes = sampled_params(&mut model, 300, 4);
    let a = check_params(&mut model, &grads, &probes, 1e-2, 1e-2, |m| {
        render_loss(&ModelSource::new(m), &rays, &settings, &w)
    });
    assert!(a.fraction() >= 0.95, "{a:?}");
}

#[test]
fn inversion_backward_matches_stored_intermediates() {
    let model = FvsrnModel::new(small(Head::Color, Some((8, 4)))).unwrap();
    let rays = random_rays(64, 20);
    let settings = RenderSettings {
        stepsize: 1.0 / 160.0,
        ..RenderSettings::default()
    };
    let w: Vec<[f32; 4]> = random_weights(64 * 4, 21)
        .chunks(4)
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect();
    let src = ModelSource::new(&model);
    let fast = render_grads(&src, &rays, &settings, &w);
    let oracle = stored_backward(&src, &rays, &settings, &w);
    let d = max_relative_difference(&fast, &oracle);
    assert!(d < 1e-3, "max relative difference {d}");
}

#[test]
fn density_backward_matches_stored_intermediates() {
    let mut model = FvsrnModel::new(small(Head::Density, Some((8, 4)))).unwrap();
    perturb_grids(&mut model, 22);
    let tf = TransferFunction::two_peaks(30.0);
    let rays = random_rays(32, 23);
    let settings = RenderSettings {
        stepsize: 1.0 / 100.0,
        ..RenderSettings::default()
    };
    let w: Vec<[f32; 4]> = random_weights(32 * 4, 24)
        .chunks(4)
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect();
    let src = ModelSource {
        tf: Some(&tf),
        ..ModelSource::new(&model)
    };
    let d = max_relative_difference(
        &render_grads(&src, &rays, &settings, &w),
        &stored_backward(&src, &rays, &settings, &w),
    );
    assert!(d < 1e-3, "max relative difference {d}");
}
