use voxdn_core::data::{simulate_acquisition, AcqParams, Volume};
use voxdn_core::CoreError;

fn uniform_volume(dims: [usize; 3], value: f32) -> Volume {
    Volume::new(dims, [1.0, 1.0, 1.0], vec![value; dims[0] * dims[1] * dims[2]]).unwrap()
}

/// Interior box indices, `margin` voxels away from every face.
fn interior(dims: [usize; 3], margin: usize) -> Vec<usize> {
    let mut ids = Vec::new();
    for z in margin..dims[0] - margin {
        for y in margin..dims[1] - margin {
            for x in margin..dims[2] - margin {
                ids.push((z * dims[1] + y) * dims[2] + x);
            }
        }
    }
    ids
}

#[test]
fn poisson_counts_have_the_right_mean() {
    // 22^3 > 10^4 voxels at lambda = 1.0 * 1.0 * 50
    let dims = [22, 22, 22];
    let activity = uniform_volume(dims, 1.0);
    let params = AcqParams { sensitivity: 50.0, psf_sigma: 0.0 };
    let out = simulate_acquisition(&activity, 1.0, &params, 17).unwrap();
    let n = out.numel() as f64;
    assert!(n >= 1e4);
    let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let ratio = mean / 1.0;
    assert!((0.98..=1.02).contains(&ratio), "mean/expected = {ratio}");
}

#[test]
fn low_dose_variance_is_five_times_normal_dose_variance() {
    // per-voxel variance across seeds, averaged over an interior region;
    // Var[counts/gain] = activity / gain, so dose 0.2 vs 1.0 gives ratio 5
    let dims = [16, 24, 24];
    let activity = uniform_volume(dims, 1.0);
    let params = AcqParams { sensitivity: 50.0, psf_sigma: 1.0 };
    let region = interior(dims, 4);
    let seeds: Vec<u64> = (0..20).collect();

    let mean_var = |dose: f64| -> f64 {
        let runs: Vec<Volume> = seeds
            .iter()
            .map(|&s| simulate_acquisition(&activity, dose, &params, 1000 + s).unwrap())
            .collect();
        let mut total = 0.0;
        for &i in &region {
            let vals: Vec<f64> = runs.iter().map(|r| r.data()[i] as f64).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            total += vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64;
        }
        total / region.len() as f64
    };

    let ratio = mean_var(0.2) / mean_var(1.0);
    assert!((4.0..=6.0).contains(&ratio), "variance ratio {ratio}");
}

#[test]
fn noise_variance_strictly_decreases_with_dose() {
    let dims = [16, 24, 24];
    let activity = uniform_volume(dims, 1.0);
    let params = AcqParams { sensitivity: 50.0, psf_sigma: 1.0 };
    let region = interior(dims, 4);

    let median_var = |dose: f64| -> f64 {
        let mut vars: Vec<f64> = (0..20)
            .map(|s| {
                let out = simulate_acquisition(&activity, dose, &params, 500 + s).unwrap();
                let vals: Vec<f64> = region.iter().map(|&i| out.data()[i] as f64).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64
            })
            .collect();
        vars.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (vars[9] + vars[10]) / 2.0
    };

    let doses = [0.1, 0.2, 0.5, 1.0];
    let vars: Vec<f64> = doses.iter().map(|&d| median_var(d)).collect();
    for w in vars.windows(2) {
        assert!(w[0] > w[1], "variance must drop as dose rises: {vars:?}");
    }
}

#[test]
fn zero_activity_stays_zero() {
    let activity = uniform_volume([6, 8, 8], 0.0);
    let params = AcqParams { sensitivity: 50.0, psf_sigma: 1.0 };
    let out = simulate_acquisition(&activity, 0.2, &params, 3).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn output_is_nonnegative_and_same_shape() {
    let mut activity = uniform_volume([8, 10, 10], 0.5);
    activity.data_mut()[0] = 0.0;
    let params = AcqParams { sensitivity: 50.0, psf_sigma: 1.5 };
    let out = simulate_acquisition(&activity, 0.2, &params, 7).unwrap();
    assert_eq!(out.dims(), activity.dims());
    assert!(out.data().iter().all(|&v| v >= 0.0));
    assert!(out.data().iter().any(|&v| v > 0.0));
}

#[test]
fn same_seed_reproduces_the_same_scan() {
    let activity = uniform_volume([6, 8, 8], 1.0);
    let params = AcqParams { sensitivity: 50.0, psf_sigma: 1.0 };
    let a = simulate_acquisition(&activity, 0.2, &params, 11).unwrap();
    let b = simulate_acquisition(&activity, 0.2, &params, 11).unwrap();
    assert_eq!(a, b);
    let c = simulate_acquisition(&activity, 0.2, &params, 12).unwrap();
    assert_ne!(a.data(), c.data());
}

#[test]
fn bad_inputs_are_rejected() {
    let activity = uniform_volume([4, 4, 4], 1.0);
    let params = AcqParams { sensitivity: 50.0, psf_sigma: 1.0 };
    for dose in [0.0, -0.5, 1.2] {
        match simulate_acquisition(&activity, dose, &params, 0) {
            Err(CoreError::Config(msg)) => assert!(msg.contains("dose"), "got {msg:?}"),
            other => panic!("dose {dose} should be rejected, got {other:?}"),
        }
    }
    let bad_params = AcqParams { sensitivity: 0.0, psf_sigma: 1.0 };
    assert!(simulate_acquisition(&activity, 0.5, &bad_params, 0).is_err());
    let mut negative = activity.clone();
    negative.data_mut()[3] = -0.1;
    assert!(simulate_acquisition(&negative, 0.5, &params, 0).is_err());
}

#[test]
fn provenance_records_the_acquisition() {
    let mut activity = uniform_volume([4, 4, 4], 1.0);
    activity.set_provenance("phantom seed=9");
    let params = AcqParams { sensitivity: 50.0, psf_sigma: 0.5 };
    let out = simulate_acquisition(&activity, 0.2, &params, 21).unwrap();
    assert_eq!(out.provenance(), "phantom seed=9 | acquired dose=0.2 seed=21");
}
