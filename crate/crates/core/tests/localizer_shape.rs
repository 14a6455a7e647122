use headpose::localizer::{build_localizer, LocalizerConfig};

#[test]
fn default_localizer_matches_golden_shape() {
    let golden = include_str!("golden/localizer_params.txt").trim().parse::<usize>().unwrap();
    let model = build_localizer(&LocalizerConfig::default(), 0).unwrap();
    assert_eq!(model.net.param_count(), golden);
}
