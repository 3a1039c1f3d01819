//! A CityGML subset reader: `Building` elements with `gml:posList` /
//! `gml:pos` coordinates, plus an optional `measuredHeight`.
//!
//! The footprint of a building is the exterior ring of its lowest horizontal
//! surface. Per-vertex heights are the highest z found over that vertex's
//! (x, y) column minus the building's lowest z.

use std::fmt::Write as _;

use quick_xml::events::Event;
use quick_xml::Reader;

use super::{BuildingRecord, IngestError};

const Z_TOL: f64 = 1e-6;
const XY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeightSource {
    MeasuredHeight,
    Geometry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedBuilding {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct CityGmlParse {
    pub buildings: Vec<BuildingRecord>,
    pub skipped: Vec<SkippedBuilding>,
    /// Height source per emitted record, aligned with `buildings`.
    pub height_sources: Vec<HeightSource>,
    /// `Building` elements encountered.
    pub elements: usize,
    /// Elements that produced at least one record.
    pub parsed_elements: usize,
}

#[derive(Default)]
struct PendingBuilding {
    id: String,
    rings: Vec<Vec<[f64; 3]>>,
    loose: Vec<[f64; 3]>,
    measured_height: Option<f64>,
    bad_numbers: bool,
}

pub fn parse_citygml_buildings(document: &[u8]) -> Result<CityGmlParse, IngestError> {
    let mut reader = Reader::from_reader(document);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut stack: Vec<Vec<u8>> = Vec::new();
    let mut out = CityGmlParse::default();
    let mut current: Option<(usize, PendingBuilding)> = None;
    let mut ring: Option<Vec<[f64; 3]>> = None;

    let xml_err = |reader: &Reader<&[u8]>, msg: String| IngestError::Xml {
        offset: reader.buffer_position() as u64,
        msg,
    };

    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| xml_err(&reader, e.to_string()))?;
        match event {
            Event::Start(e) => {
                let name = e.local_name().as_ref().to_vec();
                if name == b"Building" && current.is_none() {
                    out.elements += 1;
                    let id = e
                        .attributes()
                        .flatten()
                        .find(|a| a.key.local_name().as_ref() == b"id")
                        .and_then(|a| a.unescape_value().ok().map(|v| v.into_owned()))
                        .unwrap_or_else(|| format!("building_{}", out.elements - 1));
                    current = Some((stack.len(), PendingBuilding { id, ..Default::default() }));
                } else if name == b"LinearRing" && current.is_some() && !in_interior(&stack) {
                    ring = Some(Vec::new());
                }
                stack.push(name);
            }
            Event::End(_) => {
                let name = stack.pop().unwrap_or_default();
                if name == b"LinearRing" {
                    if let (Some(r), Some((_, b))) = (ring.take(), current.as_mut()) {
                        b.rings.push(r);
                    }
                }
                if let Some((depth, _)) = &current {
                    if *depth == stack.len() {
                        let (_, b) = current.take().expect("checked above");
                        finish_building(b, &mut out);
                    }
                }
            }
            Event::Text(t) => {
                let Some((_, b)) = current.as_mut() else { continue };
                let Some(tag) = stack.last() else { continue };
                let text = t.unescape().map_err(|e| xml_err(&reader, e.to_string()))?;
                match tag.as_slice() {
                    b"posList" | b"pos" | b"coordinates" => {
                        let Some(nums) = parse_numbers(&text) else {
                            b.bad_numbers = true;
                            continue;
                        };
                        if nums.len() % 3 != 0 {
                            b.bad_numbers = true;
                            continue;
                        }
                        let pts = nums.chunks_exact(3).map(|c| [c[0], c[1], c[2]]);
                        match ring.as_mut() {
                            Some(r) => r.extend(pts),
                            None => b.loose.extend(pts),
                        }
                    }
                    b"measuredHeight" => {
                        b.measured_height = text.trim().parse::<f64>().ok().filter(|h| h.is_finite() && *h >= 0.0);
                    }
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if !stack.is_empty() {
        return Err(xml_err(
            &reader,
            format!(
                "document ended inside <{}>",
                String::from_utf8_lossy(stack.last().expect("non-empty"))
            ),
        ));
    }
    Ok(out)
}

fn in_interior(stack: &[Vec<u8>]) -> bool {
    stack
        .iter()
        .any(|t| t.as_slice() == b"interior" || t.as_slice() == b"innerBoundaryIs")
}

fn parse_numbers(text: &str) -> Option<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect()
}

fn finish_building(b: PendingBuilding, out: &mut CityGmlParse) {
    let skip = |out: &mut CityGmlParse, reason: &str| {
        log::warn!("skipping building {}: {reason}", b.id);
        out.skipped.push(SkippedBuilding {
            id: b.id.clone(),
            reason: reason.to_string(),
        });
    };
    if b.bad_numbers {
        return skip(out, "unparseable coordinate list");
    }
    let all: Vec<[f64; 3]> = b.rings.iter().flatten().chain(b.loose.iter()).copied().collect();
    if all.is_empty() {
        return skip(out, "no geometry");
    }
    let min_z = all.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);

    let horizontal: Vec<(f64, &Vec<[f64; 3]>)> = b
        .rings
        .iter()
        .filter(|r| r.len() >= 3)
        .filter_map(|r| {
            let z0 = r[0][2];
            r.iter().all(|p| (p[2] - z0).abs() <= Z_TOL).then_some((z0, r))
        })
        .collect();
    let Some(lowest) = horizontal.iter().map(|(z, _)| *z).reduce(f64::min) else {
        return skip(out, "no horizontal surface");
    };
    let grounds: Vec<&Vec<[f64; 3]>> = horizontal
        .iter()
        .filter(|(z, _)| (*z - lowest).abs() <= Z_TOL)
        .map(|(_, r)| *r)
        .collect();

    let source = if b.measured_height.is_some() {
        HeightSource::MeasuredHeight
    } else {
        HeightSource::Geometry
    };
    let mut emitted = 0;
    let multi = grounds.len() > 1;
    for (k, ground) in grounds.iter().enumerate() {
        let footprint: Vec<[f64; 2]> = ground.iter().map(|p| [p[0], p[1]]).collect();
        let vertex_heights: Vec<f64> = match b.measured_height {
            Some(h) => vec![h; footprint.len()],
            None => footprint
                .iter()
                .map(|v| {
                    let top = all
                        .iter()
                        .filter(|p| (p[0] - v[0]).abs() <= XY_TOL && (p[1] - v[1]).abs() <= XY_TOL)
                        .map(|p| p[2])
                        .fold(min_z, f64::max);
                    top - min_z
                })
                .collect(),
        };
        let id = if multi { format!("{}_{}", b.id, k + 1) } else { b.id.clone() };
        let rec = BuildingRecord {
            id,
            footprint,
            vertex_heights,
        };
        match rec.validate() {
            Ok(()) => {
                log::debug!("building {}: height from {:?}", rec.id, source);
                out.buildings.push(rec);
                out.height_sources.push(source);
                emitted += 1;
            }
            Err(msg) => log::warn!("dropping ring of building {}: {msg}", rec.id),
        }
    }
    if emitted == 0 {
        skip(out, "footprint has fewer than 3 distinct vertices");
    } else {
        out.parsed_elements += 1;
    }
}

/// Writes LoD1 solids: a ground ring at z = 0, a roof ring at each vertex's
/// height and one wall quad per footprint edge.
pub fn write_citygml_solids(buildings: &[BuildingRecord]) -> String {
    let mut s = String::new();
    s.push_str(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <core:CityModel xmlns:core=\"http://www.opengis.net/citygml/2.0\" \
         xmlns:bldg=\"http://www.opengis.net/citygml/building/2.0\" \
         xmlns:gml=\"http://www.opengis.net/gml\">\n",
    );
    for b in buildings {
        let ring = b.ring();
        let heights = b.ring_heights();
        let n = ring.len();
        let _ = writeln!(s, "  <core:cityObjectMember>\n    <bldg:Building gml:id=\"{}\">", xml_escape(&b.id));
        s.push_str("      <bldg:lod1Solid><gml:Solid><gml:exterior><gml:CompositeSurface>\n");
        let mut polygon = |pts: &[[f64; 3]]| {
            s.push_str("        <gml:surfaceMember><gml:Polygon><gml:exterior><gml:LinearRing><gml:posList srsDimension=\"3\">");
            for (i, p) in pts.iter().chain(std::iter::once(&pts[0])).enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
            }
            s.push_str("</gml:posList></gml:LinearRing></gml:exterior></gml:Polygon></gml:surfaceMember>\n");
        };
        let ground: Vec<[f64; 3]> = ring.iter().map(|p| [p[0], p[1], 0.0]).collect();
        let roof: Vec<[f64; 3]> = ring.iter().zip(heights).map(|(p, h)| [p[0], p[1], *h]).collect();
        polygon(&ground);
        polygon(&roof);
        for i in 0..n {
            let j = (i + 1) % n;
            polygon(&[ground[i], ground[j], roof[j], roof[i]]);
        }
        s.push_str("      </gml:CompositeSurface></gml:exterior></gml:Solid></bldg:lod1Solid>\n");
        s.push_str("    </bldg:Building>\n  </core:cityObjectMember>\n");
    }
    s.push_str("</core:CityModel>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LOD1_BOX: &str = r#"<?xml version="1.0"?>
<core:CityModel xmlns:core="http://www.opengis.net/citygml/2.0" xmlns:bldg="http://www.opengis.net/citygml/building/2.0" xmlns:gml="http://www.opengis.net/gml">
 <core:cityObjectMember>
  <bldg:Building gml:id="BLD_1">
   <bldg:lod1Solid><gml:Solid><gml:exterior><gml:CompositeSurface>
    <gml:surfaceMember><gml:Polygon><gml:exterior><gml:LinearRing>
     <gml:posList>0 0 0 10 0 0 10 10 0 0 10 0 0 0 0</gml:posList>
    </gml:LinearRing></gml:exterior></gml:Polygon></gml:surfaceMember>
    <gml:surfaceMember><gml:Polygon><gml:exterior><gml:LinearRing>
     <gml:posList>0 0 12 10 0 12 10 10 12 0 10 12 0 0 12</gml:posList>
    </gml:LinearRing></gml:exterior></gml:Polygon></gml:surfaceMember>
   </gml:CompositeSurface></gml:exterior></gml:Solid></bldg:lod1Solid>
  </bldg:Building>
 </core:cityObjectMember>
</core:CityModel>"#;

    #[test]
    fn lod1_box() {
        let p = parse_citygml_buildings(LOD1_BOX.as_bytes()).unwrap();
        assert_eq!(p.buildings.len(), 1);
        let b = &p.buildings[0];
        assert_eq!(b.id, "BLD_1");
        assert_eq!(b.ring(), &[[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]]);
        assert!(b.vertex_heights.iter().all(|&h| h == 12.0));
        assert_eq!(b.area(), 100.0);
        assert_eq!(p.height_sources, vec![HeightSource::Geometry]);
    }

    #[test]
    fn measured_height_overrides_geometry() {
        let doc = LOD1_BOX.replace(
            "<bldg:lod1Solid>",
            "<bldg:measuredHeight uom=\"m\">15.5</bldg:measuredHeight><bldg:lod1Solid>",
        );
        let p = parse_citygml_buildings(doc.as_bytes()).unwrap();
        assert!(p.buildings[0].vertex_heights.iter().all(|&h| h == 15.5));
        assert_eq!(p.height_sources, vec![HeightSource::MeasuredHeight]);
    }

    #[test]
    fn empty_document() {
        let p = parse_citygml_buildings(b"<core:CityModel xmlns:core=\"x\"></core:CityModel>").unwrap();
        assert!(p.buildings.is_empty());
        assert_eq!(p.elements, 0);
    }

    #[test]
    fn malformed_xml_reports_offset() {
        let doc = b"<a><b></a>";
        match parse_citygml_buildings(doc) {
            Err(IngestError::Xml { offset, .. }) => assert!(offset > 0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_citygml_buildings(b"<a><bldg:Building>"),
            Err(IngestError::Xml { .. })
        ));
    }

    #[test]
    fn degenerate_buildings_are_skipped_and_counted() {
        let doc = r#"<m xmlns:bldg="b" xmlns:gml="g">
          <bldg:Building gml:id="flat_line"><gml:LinearRing><gml:posList>0 0 0 1 0 0 0 0 0</gml:posList></gml:LinearRing></bldg:Building>
          <bldg:Building gml:id="nothing"></bldg:Building>
          <bldg:Building gml:id="ok"><gml:LinearRing><gml:posList>0 0 0 1 0 0 1 1 0 0 0 0</gml:posList></gml:LinearRing></bldg:Building>
        </m>"#;
        let p = parse_citygml_buildings(doc.as_bytes()).unwrap();
        assert_eq!(p.elements, 3);
        assert_eq!(p.buildings.len(), 1);
        assert_eq!(p.skipped.len(), 2);
        assert_eq!(p.parsed_elements + p.skipped.len(), p.elements);
    }

    #[test]
    fn interior_rings_are_ignored_and_multi_ground_rings_split() {
        let doc = r#"<m xmlns:bldg="b" xmlns:gml="g"><bldg:Building gml:id="m">
          <gml:Polygon><gml:exterior><gml:LinearRing><gml:posList>0 0 0 10 0 0 10 10 0 0 10 0</gml:posList></gml:LinearRing></gml:exterior>
            <gml:interior><gml:LinearRing><gml:posList>2 2 0 4 2 0 4 4 0 2 4 0</gml:posList></gml:LinearRing></gml:interior></gml:Polygon>
          <gml:Polygon><gml:exterior><gml:LinearRing><gml:posList>20 0 0 25 0 0 25 5 0</gml:posList></gml:LinearRing></gml:exterior></gml:Polygon>
          <gml:Polygon><gml:exterior><gml:LinearRing><gml:posList>0 0 6 10 0 6 10 10 6</gml:posList></gml:LinearRing></gml:exterior></gml:Polygon>
        </bldg:Building></m>"#;
        let p = parse_citygml_buildings(doc.as_bytes()).unwrap();
        let ids: Vec<&str> = p.buildings.iter().map(|b| b.id.as_str()).collect();
        assert_eq!(ids, ["m_1", "m_2"]);
        assert_eq!(p.buildings[0].vertex_heights, vec![6.0, 6.0, 6.0, 0.0]);
        assert_eq!(p.buildings[1].vertex_heights, vec![0.0; 3]);
        assert_eq!(p.parsed_elements, 1);
    }

    #[test]
    fn generator_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let boxes: Vec<BuildingRecord> = (0..5)
            .map(|i| {
                let x = rng.gen_range(0..1000) as f64;
                let y = rng.gen_range(0..1000) as f64;
                let w = rng.gen_range(3..40) as f64;
                let d = rng.gen_range(3..40) as f64;
                let h = rng.gen_range(6..120) as f64 * 0.5;
                BuildingRecord::flat(
                    format!("box{i}"),
                    vec![[x, y], [x + w, y], [x + w, y + d], [x, y + d]],
                    h,
                )
            })
            .collect();
        let doc = write_citygml_solids(&boxes);
        let p = parse_citygml_buildings(doc.as_bytes()).unwrap();
        assert_eq!(p.buildings.len(), 5);
        for (got, want) in p.buildings.iter().zip(&boxes) {
            assert_eq!(got.id, want.id);
            assert_eq!(got.ring(), want.ring());
            assert_eq!(got.area(), want.area());
            assert_eq!(got.height(), want.height());
        }
    }
}
