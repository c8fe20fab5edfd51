use polyrbf::artifact::{read_fit, write_fit};
use polyrbf::metrics::mse_log;
use polyrbf::protocols::multi_shell_scheme;
use polyrbf::{fit_volume, generate_phantom, normalize_b0, resample_volume, BasisConfig, PhantomSpec, Projector};

#[test]
fn phantom_fit_artifact_and_prediction() {
    let scheme = multi_shell_scheme(&[(1000.0, 30), (2000.0, 30), (3000.0, 30)], 6).unwrap();
    let phantom = generate_phantom(&PhantomSpec::layered([4, 4, 8], 10.0, 21), &scheme).unwrap();
    let norm = normalize_b0(&phantom.raw, &scheme).unwrap();
    let cfg = BasisConfig::new(10, 3, norm.scheme.max_b()).unwrap();
    let projector = Projector::for_scheme(&norm.scheme, &cfg).unwrap();
    let fits = fit_volume(&projector, &cfg, &norm.scheme, &norm.volume).unwrap();
    assert_eq!(fits.voxels.len(), 128);

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("fit.prbf");
    write_fit(&fits, &path).unwrap();
    let loaded = read_fit(&path).unwrap();
    assert_eq!(loaded, fits);

    let (pred, report) = resample_volume(&loaded, &scheme, false).unwrap();
    assert!(report.is_empty());
    for m in scheme.b0_indices() {
        assert!(pred
            .frame(m)
            .iter()
            .enumerate()
            .all(|(v, &s)| !fits.mask[v] || s == 1.0));
    }

    // Prediction against the noise-free signal should beat the noisy data.
    let truth = normalize_b0(&phantom.truth, &scheme).unwrap();
    let pred_dw = pred.select_frames(&norm.kept_frames).unwrap();
    let pick =
        |vol: &polyrbf::SignalVolume| -> Vec<f64> { fits.voxels.iter().flat_map(|&v| vol.voxel(v).to_vec()).collect() };
    let model_err = mse_log(&pick(&pred_dw), &pick(&truth.volume)).unwrap();
    let data_err = mse_log(&pick(&norm.volume), &pick(&truth.volume)).unwrap();
    assert!(model_err < data_err, "model {model_err} vs data {data_err}");
}
