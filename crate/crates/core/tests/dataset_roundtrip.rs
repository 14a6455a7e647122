use headpose::dataio::synth::generate;
use headpose::dataio::{load_dataset, synth_generate, DatasetFormat, SynthConfig};

#[test]
fn synthetic_dataset_survives_write_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let written = synth_generate(&SynthConfig::default(), 2, 3, 21, dir.path()).unwrap();
    assert_eq!(written, generate(&SynthConfig::default(), 2, 3, 21));
    for format in [DatasetFormat::BiwiLike, DatasetFormat::PandoraLike, DatasetFormat::Synthetic] {
        let mut loaded = load_dataset(dir.path(), format).unwrap();
        loaded.sort_by_key(|r| r.id());
        let mut expected = written.clone();
        expected.sort_by_key(|r| r.id());
        assert_eq!(loaded.len(), expected.len());
        for (a, b) in loaded.iter().zip(&expected) {
            assert_eq!(a.id(), b.id());
            assert_eq!(a.depth, b.depth, "{}", a.id());
            assert_eq!(a.gray, b.gray, "{}", a.id());
            assert_eq!(a.intrinsics, b.intrinsics);
            let (pa, pb) = (a.head_pose.unwrap(), b.head_pose.unwrap());
            for (x, y) in [(pa.pitch, pb.pitch), (pa.roll, pb.roll), (pa.yaw, pb.yaw)] {
                assert!((x - y).abs() < 1e-9, "{}: {x} vs {y}", a.id());
            }
            assert_eq!(a.head_center_2d, b.head_center_2d);
            assert_eq!(a.joints, b.joints);
        }
    }
}
