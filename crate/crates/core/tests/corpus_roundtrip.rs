use std::fs;

use proptest::prelude::*;
use selkd::corpus::{load_corpus, write_bitext, Side};
use tempfile::tempdir;

const SRC: &str = "the cat sat\non the mat\nthe dog\n";
const RAW: &str = "die katze sass\nauf der matte\nder hund\n";
const KD: &str = "die katze sass\nauf die matte\nder der hund\n";

#[test]
fn three_line_fixture_reloads_byte_identical() {
    let d = tempdir().unwrap();
    let p = |n: &str| d.path().join(n);
    fs::write(p("s"), SRC).unwrap();
    fs::write(p("r"), RAW).unwrap();
    fs::write(p("k"), KD).unwrap();
    let c = load_corpus(p("s"), p("r"), p("k")).unwrap();
    for (side, name, original) in [(Side::Source, "s2", SRC), (Side::Raw, "r2", RAW), (Side::Distilled, "k2", KD)] {
        write_bitext(&c, side, p(name)).unwrap();
        assert_eq!(fs::read_to_string(p(name)).unwrap(), original);
    }
    let again = load_corpus(p("s2"), p("r2"), p("k2")).unwrap();
    assert_eq!(again, c);
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-e]{1,2}", 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn load_write_load_is_a_fixed_point(rows in prop::collection::vec((sentence(), sentence(), sentence()), 1..8)) {
        let d = tempdir().unwrap();
        let p = |n: &str| d.path().join(n);
        let join = |f: &dyn Fn(&(Vec<String>, Vec<String>, Vec<String>)) -> &Vec<String>| {
            rows.iter().map(|r| f(r).join(" ") + "\n").collect::<String>()
        };
        fs::write(p("s"), join(&|r| &r.0)).unwrap();
        fs::write(p("r"), join(&|r| &r.1)).unwrap();
        fs::write(p("k"), join(&|r| &r.2)).unwrap();
        let c = load_corpus(p("s"), p("r"), p("k")).unwrap();
        write_bitext(&c, Side::Source, p("s2")).unwrap();
        write_bitext(&c, Side::Raw, p("r2")).unwrap();
        write_bitext(&c, Side::Distilled, p("k2")).unwrap();
        let again = load_corpus(p("s2"), p("r2"), p("k2")).unwrap();
        prop_assert_eq!(again, c);
    }
}
