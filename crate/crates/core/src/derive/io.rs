//! CSV readers for the optional raw inputs of the derive stage.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use super::geo::Coordinate;
use super::route::RoadGraph;
use super::{TravelMode, TripRecord};
use crate::{Error, Result};

/// Maps raw survey mode strings to personal-motorized or other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeMap {
    motorized: BTreeSet<String>,
}

impl Default for ModeMap {
    fn default() -> Self {
        ModeMap::new(["car", "motorcycle", "van", "jeep", "truck", "suv", "pickup"])
    }
}

impl ModeMap {
    pub fn new<I, S>(motorized: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        ModeMap {
            motorized: motorized.into_iter().map(|s| s.as_ref().trim().to_lowercase()).collect(),
        }
    }

    pub fn classify(&self, raw: &str) -> TravelMode {
        if self.motorized.contains(&raw.trim().to_lowercase()) {
            TravelMode::PersonalMotorized
        } else {
            TravelMode::Other
        }
    }
}

fn records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::csv(path, e)))
        .collect()
}

#[derive(Deserialize)]
struct TripRow {
    person_id: String,
    mode: String,
    o_lat: f64,
    o_lon: f64,
    d_lat: f64,
    d_lon: f64,
    #[serde(default)]
    distance_miles: Option<f64>,
}

/// Reads `person_id,mode,o_lat,o_lon,d_lat,d_lon[,distance_miles]`.
/// Trip ids are `<person_id>#<row>`.
pub fn read_trips(path: &Path, modes: &ModeMap) -> Result<Vec<TripRecord>> {
    let rows: Vec<TripRow> = records(path)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            if let Some(d) = r.distance_miles {
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::InvalidValue {
                        context: format!("{} row {}", path.display(), i + 1),
                        detail: format!("distance_miles {d}"),
                    });
                }
            }
            Ok(TripRecord {
                trip_id: format!("{}#{}", r.person_id, i + 1),
                mode: modes.classify(&r.mode),
                origin: Coordinate::new(r.o_lat, r.o_lon)?,
                destination: Coordinate::new(r.d_lat, r.d_lon)?,
                distance_miles: r.distance_miles,
                person_id: r.person_id,
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct FacilityRow {
    lat: f64,
    lon: f64,
}

/// Reads `lat,lon[,label]`.
pub fn read_facilities(path: &Path) -> Result<Vec<Coordinate>> {
    let rows: Vec<FacilityRow> = records(path)?;
    rows.into_iter().map(|r| Coordinate::new(r.lat, r.lon)).collect()
}

#[derive(Deserialize)]
struct NodeRow {
    node_id: u64,
    lat: f64,
    lon: f64,
}

#[derive(Deserialize)]
struct EdgeRow {
    node_u: u64,
    node_v: u64,
    length_miles: f64,
}

/// Reads a node table (`node_id,lat,lon`) and an edge list
/// (`node_u,node_v,length_miles`).
pub fn read_road_graph(nodes: &Path, edges: &Path) -> Result<RoadGraph> {
    let n: Vec<NodeRow> = records(nodes)?;
    let e: Vec<EdgeRow> = records(edges)?;
    let nodes = n
        .into_iter()
        .map(|r| Ok((r.node_id, Coordinate::new(r.lat, r.lon)?)))
        .collect::<Result<Vec<_>>>()?;
    let edges: Vec<_> = e.into_iter().map(|r| (r.node_u, r.node_v, r.length_miles)).collect();
    RoadGraph::new(&nodes, &edges)
}

#[derive(Deserialize)]
struct VertexRow {
    zone_id: String,
    vertex_order: i64,
    lat: f64,
    lon: f64,
}

/// Reads `zone_id,vertex_order,lat,lon` into one ring per zone.
pub fn read_zone_polygons(path: &Path) -> Result<BTreeMap<String, Vec<Coordinate>>> {
    let rows: Vec<VertexRow> = records(path)?;
    let mut grouped: BTreeMap<String, Vec<(i64, Coordinate)>> = BTreeMap::new();
    for r in rows {
        grouped
            .entry(r.zone_id)
            .or_default()
            .push((r.vertex_order, Coordinate::new(r.lat, r.lon)?));
    }
    Ok(grouped
        .into_iter()
        .map(|(z, mut v)| {
            v.sort_by_key(|(o, _)| *o);
            (z, v.into_iter().map(|(_, c)| c).collect())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn reads_trips_with_optional_distance() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("trips.csv");
        fs::write(
            &p,
            "person_id,mode,o_lat,o_lon,d_lat,d_lon,distance_miles\nP1,Car,30,-97,30.1,-97,5\nP1,bus,30,-97,30.1,-97,\n",
        )
        .unwrap();
        let t = read_trips(&p, &ModeMap::default()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].mode, TravelMode::PersonalMotorized);
        assert_eq!(t[1].mode, TravelMode::Other);
        assert_eq!(t[0].distance_miles, Some(5.0));
        assert_eq!(t[1].distance_miles, None);
    }

    #[test]
    fn reads_polygons_in_vertex_order() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("poly.csv");
        fs::write(&p, "zone_id,vertex_order,lat,lon\nZ1,2,1,1\nZ1,1,0,1\nZ1,0,0,0\nZ1,3,1,0\n").unwrap();
        let polys = read_zone_polygons(&p).unwrap();
        let ring = &polys["Z1"];
        assert_eq!(ring[0], Coordinate::new(0.0, 0.0).unwrap());
        let g = crate::derive::polygon_centroid(ring).unwrap();
        assert!((g.lat - 0.5).abs() < 1e-12);
    }
}
