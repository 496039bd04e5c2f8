use sodkit_annotate::datasetkit::{assign_categories_from_phrases, category_stats};
use sodkit_annotate::phrasekit::read_phrase_file;
use sodkit_core::synth::write_dataset;
use sodkit_core::Split;

/// The generated phrase file must parse even when a scene holds two identical
/// objects.
#[test]
fn generated_phrase_file_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), 64, 64, 1, Split::Train).unwrap();
    let sets = read_phrase_file(data.phrases_path()).unwrap();
    assert!(!sets.is_empty());
    for set in &sets {
        let i: usize = set.image_id().trim_start_matches("train_").parse().unwrap();
        let want = data.scenes[i].phrases();
        let got: Vec<String> = set.phrases().iter().map(|p| p.to_string()).collect();
        assert_eq!(got, want, "{}", set.image_id());
    }

    let mut records = data.records.clone();
    for r in &mut records {
        r.categories.clear();
    }
    assign_categories_from_phrases(&mut records, &sets);
    let stats = category_stats(&records);
    let mut from_scenes = data.records.clone();
    for (r, s) in from_scenes.iter_mut().zip(&data.scenes) {
        r.categories = s.categories();
    }
    assert_eq!(stats, category_stats(&from_scenes));
}
