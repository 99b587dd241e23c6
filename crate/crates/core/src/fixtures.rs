//! Small hand-checkable instances shared by tests, examples and the CLI.

use std::collections::BTreeMap;

use crate::gallery::{Facet, FacetSchema, Gallery, PersonRecord, Question};
use crate::query::Query;

/// Five single-image identities over three binary facets, one question each:
///
/// | image | f1 | f2 | f3 |
/// |-------|----|----|----|
/// | 1     | a  | x  | p  |
/// | 2     | a  | y  | p  |
/// | 3     | b  | x  | p  |
/// | 4     | b  | y  | q  |
/// | 5     | a  | x  | q  |
pub fn e1_gallery() -> Gallery {
    let facet = |id, name: &str, a: &str, b: &str| Facet {
        id,
        name: name.to_string(),
        domain: vec![a.to_string(), b.to_string()],
    };
    let facets = vec![
        facet(1, "f1", "a", "b"),
        facet(2, "f2", "x", "y"),
        facet(3, "f3", "p", "q"),
    ];
    let questions = (1..=3)
        .map(|id| Question {
            id,
            prompt: format!("What is f{id}?"),
            facets: vec![id],
        })
        .collect();
    let schema = FacetSchema::new(facets, questions).expect("E1 schema is valid");
    let rows = [
        ("a", "x", "p"),
        ("a", "y", "p"),
        ("b", "x", "p"),
        ("b", "y", "q"),
        ("a", "x", "q"),
    ];
    let records = rows
        .iter()
        .enumerate()
        .map(|(j, (f1, f2, f3))| PersonRecord {
            image_id: j as u32 + 1,
            identity: j as u32 + 1,
            facet_values: BTreeMap::from([
                (1, f1.to_string()),
                (2, f2.to_string()),
                (3, f3.to_string()),
            ]),
        })
        .collect();
    Gallery::new(schema, records, 0).expect("E1 gallery is valid")
}

/// The single E1 query: identity 1 answering every question truthfully.
pub fn e1_queries() -> Vec<Query> {
    vec![Query::truthful(&e1_gallery(), 1).expect("identity 1 exists")]
}
