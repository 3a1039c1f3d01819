//! Building-list interchange format: a JSON array of
//! `{"id": .., "footprint": [[x, y], ..], "heights": [..]}` objects.

use serde_json::Value;

use super::{BuildingRecord, IngestError};

pub fn parse_building_list(document: &[u8]) -> Result<Vec<BuildingRecord>, IngestError> {
    let root: Value = serde_json::from_slice(document).map_err(|e| IngestError::Json(e.to_string()))?;
    let items = match root {
        Value::Array(items) => items,
        other => return Err(IngestError::Json(format!("expected array, found {}", kind(&other)))),
    };
    items
        .into_iter()
        .enumerate()
        .map(|(index, item)| {
            let rec: BuildingRecord = serde_json::from_value(item)
                .map_err(|e| IngestError::Schema { index, msg: e.to_string() })?;
            rec.validate().map_err(|msg| IngestError::Schema { index, msg })?;
            Ok(rec)
        })
        .collect()
}

/// Pretty-printed, one record per array element. Floats are written in
/// shortest round-trip form so decode(encode(x)) == x.
pub fn write_building_list(buildings: &[BuildingRecord]) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(buildings).expect("building records always serialize");
    out.push(b'\n');
    out
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_triangle() {
        let doc = br#"[{"id": "t1", "footprint": [[0,0],[4,0],[0,3]], "heights": [3,3,3]}]"#;
        let b = parse_building_list(doc).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].id, "t1");
        assert_eq!(b[0].height(), 3.0);
    }

    #[test]
    fn empty_list() {
        assert!(parse_building_list(b"[]").unwrap().is_empty());
    }

    #[test]
    fn schema_errors_name_field_and_index() {
        let doc = br#"[{"id": "ok", "footprint": [[0,0],[1,0],[0,1]], "heights": [1,1,1]},
                       {"id": "bad", "footprint": [[0,0],[1,0],[0,1]]}]"#;
        match parse_building_list(doc) {
            Err(IngestError::Schema { index: 1, msg }) => assert!(msg.contains("heights"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let doc = br#"[{"id": "neg", "footprint": [[0,0],[1,0],[0,1]], "heights": [1,-2,1]}]"#;
        match parse_building_list(doc) {
            Err(IngestError::Schema { index: 0, msg }) => assert!(msg.contains("heights[1]"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_building_list(b"{}"), Err(IngestError::Json(_))));
        assert!(matches!(parse_building_list(b"[1,"), Err(IngestError::Json(_))));
    }

    fn record() -> impl Strategy<Value = BuildingRecord> {
        (3usize..9, any::<u32>())
            .prop_flat_map(|(n, tag)| {
                (
                    Just(tag),
                    proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), n),
                    proptest::collection::vec(0.0f64..300.0, n),
                )
            })
            .prop_filter_map("needs 3 distinct vertices", |(tag, pts, heights)| {
                let rec = BuildingRecord {
                    id: format!("b{tag}"),
                    footprint: pts.into_iter().map(|(x, y)| [x, y]).collect(),
                    vertex_heights: heights,
                };
                rec.validate().is_ok().then_some(rec)
            })
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity(recs in proptest::collection::vec(record(), 0..50)) {
            let bytes = write_building_list(&recs);
            prop_assert_eq!(parse_building_list(&bytes).unwrap(), recs);
        }
    }
}
