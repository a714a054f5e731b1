//! Builds gendered first-name lists from birth-count records and uses them
//! as an extra attribute vocabulary.

use fairr::lexicon::{build_name_lists, parse_name_records, AttributeConfig, AttributeMember};
use fairr::neutrality::neutrality_of_text;

const RECORDS: &str = "\
mary,F,7065
mary,M,27
anna,F,2604
emma,F,2003
john,M,9655
john,F,46
william,M,9532
james,M,5927
jordan,M,310
jordan,F,290
";

fn main() -> fairr::Result<()> {
    let records = parse_name_records(RECORDS.as_bytes(), "records")?;
    let lists = build_name_lists(&records, 0.9)?;
    println!("female {:?}\nmale   {:?}", lists.female, lists.male);

    let base = AttributeConfig::default_gender();
    let extend = |i: usize, names: &[String]| {
        let m = &base.members()[i];
        AttributeMember::new(m.name(), m.words().iter().cloned().chain(names.iter().cloned()))
    };
    let with_names = AttributeConfig::new(vec![extend(0, &lists.female)?, extend(1, &lists.male)?], None, base.tau())?;
    let text = "john and william met james about the report";
    println!(
        "{text:?}: neutrality {:.3} without names, {:.3} with names",
        neutrality_of_text(text, &base),
        neutrality_of_text(text, &with_names)
    );
    Ok(())
}
