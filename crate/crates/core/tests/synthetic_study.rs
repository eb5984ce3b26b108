//! Size-separated synthetic cohort through features, boosting and SHAP.

use morphoml_core::aggregate::{assemble_features, measure_patch, patch_channels, FeatureRegistry, DEFAULT_CONFIGURATION};
use morphoml_core::attribution::{explain_rows, is_size_feature, mean_abs_shap, rank_features};
use morphoml_core::cohort::StainRegistry;
use morphoml_core::gbdt::{predict_core, stratified_folds, train, GbdtParams, TrainingData};
use morphoml_core::objectfeatures::{LabelMask, ObjectKind};
use morphoml_core::preprocess::{extract_patch_grid, CoreImage, StainMatrix};
use morphoml_core::synth::{generate_cohort, SynthSpec};
use morphoml_core::Sequential;

#[test]
fn size_separated_cohort_is_learned_from_size() {
    let spec = SynthSpec::size_separated(6, 4, 3);
    let cohort = generate_cohort(&spec).unwrap();
    let registry = FeatureRegistry::configuration(DEFAULT_CONFIGURATION).unwrap();
    let stains = StainRegistry::default();
    let mut rows = Vec::new();
    let mut core_of_row = Vec::new();
    let mut labels = Vec::new();
    for (ci, core) in cohort.cores.iter().enumerate() {
        let image = CoreImage::new(core.record.core_ids[0].clone(), core.image.clone()).unwrap();
        for patch in extract_patch_grid(&core.record.case_id, &image, 4).unwrap() {
            let (w, h) = patch.pixels.dims();
            let mask = LabelMask::new(core.mask.crop(patch.origin.0, patch.origin.1, w, h), ObjectKind::Nucleus);
            let channels = patch_channels(&patch.pixels, &StainMatrix::default()).unwrap();
            let data = measure_patch(&mask, &channels, &registry.blocks, 10);
            let v = assemble_features(&registry, patch.key.clone(), &data, None, &stains).unwrap();
            rows.push(v.values);
            core_of_row.push(ci);
            labels.push(usize::from(core.record.diagnosis != spec.classes[0].label));
        }
    }
    let core_labels: Vec<usize> = (0..cohort.cores.len()).map(|c| labels[core_of_row.iter().position(|&x| x == c).unwrap()]).collect();
    let folds = stratified_folds(&core_labels, 3, 1);
    let mask = registry.categorical_mask();
    let params = GbdtParams { num_rounds: 20, ..Default::default() };
    let mut correct = 0;
    for f in 0..3 {
        let train_idx: Vec<usize> = (0..rows.len()).filter(|&i| folds[core_of_row[i]] != f).collect();
        let x: Vec<Vec<f64>> = train_idx.iter().map(|&i| rows[i].clone()).collect();
        let y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let hash = registry.hash();
        let data = TrainingData { features: &x, labels: &y, categorical: &mask, n_classes: 2, schema_hash: &hash };
        let model = train(&Sequential, data, &params).unwrap();
        for c in (0..core_labels.len()).filter(|&c| folds[c] == f) {
            let patches: Vec<Vec<f64>> = (0..rows.len()).filter(|&i| core_of_row[i] == c).map(|i| rows[i].clone()).collect();
            correct += usize::from(predict_core(&model, &patches).unwrap().label == core_labels[c]);
        }
        if f == 0 {
            let reports = explain_rows(&Sequential, &model, &x).unwrap();
            let table = mean_abs_shap(&reports);
            let total: Vec<f64> = (0..table[0].len()).map(|j| table.iter().map(|t| t[j]).sum()).collect();
            let top = rank_features(&total)[0];
            let name = registry.columns[top].name.clone();
            assert!(is_size_feature(&name), "top feature {name}");
        }
    }
    assert_eq!(correct, core_labels.len());
}
