use spectra_dx::classifier::{train_classifier, ClassifierHyper, LabeledScore};
use spectra_dx::flow::{euler_refine, gen_mask_corpus, train_flow, Architecture, CorpusSpec, Corruption, TrainHyper, VectorFieldModel};
use spectra_dx::pipeline::{diagnose_image, gen_case_set, region_report, CaseSpec, PatchProjector};
use spectra_dx::rmt::SpectralOptions;
use spectra_dx::spiked::{generate, EnsembleConfig, SpikeSpec};
use spectra_dx::{spectral_report, FeatureMatrix, Grid};

#[test]
fn spiked_matrix_survives_both_file_formats() {
    let cfg = EnsembleConfig {
        n_samples: 300,
        n_features: 60,
        spike: Some(SpikeSpec::new(vec![5.0])),
        seed: 31,
        n_trials: 1,
    };
    let f = generate(&cfg).unwrap();
    let direct = spectral_report(&f).unwrap();
    assert!(direct.sas > 0.5);

    let from_csv = FeatureMatrix::from_csv_str(&f.to_csv_string()).unwrap();
    let from_bin = FeatureMatrix::from_binary(&f.to_binary()).unwrap();
    assert_eq!(spectral_report(&from_csv).unwrap(), direct);
    assert_eq!(spectral_report(&from_bin).unwrap(), direct);
}

#[test]
fn image_pipeline_with_fitted_classifier() {
    let spec = CaseSpec::default();
    let provider = PatchProjector::new(spec.patch_size, 32, 5).unwrap();
    let opts = SpectralOptions::default();
    let cases = gen_case_set(&spec, 50, 4, 12).unwrap();
    let data: Vec<LabeledScore> = cases
        .iter()
        .map(|(c, label)| {
            let sas = region_report(&c.image, &c.mask, &provider, &opts).unwrap().sas;
            LabeledScore::new(sas, *label).unwrap()
        })
        .collect();
    let clf = train_classifier(&data, &ClassifierHyper::default()).unwrap();

    for (case, label) in gen_case_set(&spec, 10, 4, 99).unwrap() {
        // PGM quantization must not flip a diagnosis
        let image = Grid::from_pgm(&case.image.to_pgm()).unwrap();
        let d = diagnose_image(&image, &case.mask, &provider, &clf, &opts).unwrap();
        assert_eq!(d.label, label, "SAS {}", d.sas);
        assert_eq!(d.summary().n_patches, case.region.rows * case.region.cols);
    }
}

#[test]
fn saved_flow_model_refines_identically() {
    let corpus = gen_mask_corpus(&CorpusSpec {
        n: 6,
        height: 16,
        width: 16,
        channels: 4,
        corruption: Corruption::default(),
        seed: 2,
    })
    .unwrap();
    let hyper = TrainHyper { steps: 20, ..TrainHyper::default() };
    let model = train_flow(&corpus, Architecture::default(), &hyper).unwrap().model;
    let dir = std::env::temp_dir().join(format!("spectra-dx-model-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (bin, json) = (dir.join("m.bin"), dir.join("m.json"));
    model.save(&bin, &json).unwrap();
    let loaded = VectorFieldModel::load(&bin, &json).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(loaded.checksum(), model.checksum());
    let ex = &corpus[0];
    assert_eq!(
        euler_refine(&loaded, &ex.coarse, &ex.cond, 10).unwrap(),
        euler_refine(&model, &ex.coarse, &ex.cond, 10).unwrap()
    );
}
