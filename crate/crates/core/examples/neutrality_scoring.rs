//! Scores short passages for gender neutrality, first with the built-in
//! word lists and then with a custom three-member attribute and a stricter
//! tolerance.

use fairr::lexicon::{tokenize, AttributeConfig, AttributeMember};
use fairr::neutrality::{magnitude_of_text, neutrality_of_text, score_corpus};

fn main() -> fairr::Result<()> {
    let passages = [
        ("p1", "The committee approved the annual budget."),
        ("p2", "He said his brother would chair the meeting."),
        ("p3", "She and he shared the award with their mother."),
        ("p4", "Her speech opened the session."),
    ];
    let gender = AttributeConfig::default_gender();
    println!("tokens of p3: {:?}", tokenize(passages[2].1).tokens());
    for (id, text) in passages {
        let mag = magnitude_of_text(text, &gender);
        println!("{id}: magnitudes {:?} -> neutrality {:.3}", mag.0, neutrality_of_text(text, &gender));
    }

    let strict = gender.clone().with_tau(0);
    println!("p4 with tau 0: {:.3}", neutrality_of_text(passages[3].1, &strict));

    let age = AttributeConfig::new(
        vec![
            AttributeMember::new("young", ["child", "teen", "youth"])?,
            AttributeMember::new("adult", ["adult", "parent", "worker"])?,
            AttributeMember::new("old", ["elder", "retiree", "grandparent"])?,
        ],
        Some(vec![0.25, 0.5, 0.25]),
        1,
    )?;
    let docs = [
        ("a", "a parent and a worker met a child"),
        ("b", "the elder and the retiree and the grandparent"),
        ("c", "a teen worker and an elder adult parent"),
    ];
    let table = score_corpus(docs, &age)?;
    println!("age table (fingerprint {}):", table.fingerprint());
    for (id, w) in table.iter() {
        println!("  {id}\t{w:.3}");
    }
    Ok(())
}
