use crate::{Error, Result};

pub const EARTH_RADIUS_MILES: f64 = 3958.8;

/// A WGS84-style latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coordinate {
    pub lat: f64,
    pub lon: f64,
}

impl Coordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidValue {
                context: "coordinate".into(),
                detail: format!("({lat}, {lon}) out of range"),
            });
        }
        Ok(Coordinate { lat, lon })
    }
}

/// Great-circle distance in miles (haversine form).
pub fn haversine_miles(a: Coordinate, b: Coordinate) -> f64 {
    if a == b {
        return 0.0;
    }
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = p2 - p1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_MILES * h.sqrt().min(1.0).asin()
}

/// Area-weighted centroid of a simple polygon, treating (lon, lat) as
/// planar coordinates. A repeated closing vertex is ignored.
pub fn polygon_centroid(ring: &[Coordinate]) -> Result<Coordinate> {
    let mut pts = ring;
    if pts.len() >= 2 && pts.first() == pts.last() {
        pts = &pts[..pts.len() - 1];
    }
    if pts.len() < 3 {
        return Err(Error::DegeneratePolygon);
    }
    // shift to the first vertex for conditioning
    let (x0, y0) = (pts[0].lon, pts[0].lat);
    let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..pts.len() {
        let j = (i + 1) % pts.len();
        let (xi, yi) = (pts[i].lon - x0, pts[i].lat - y0);
        let (xj, yj) = (pts[j].lon - x0, pts[j].lat - y0);
        let cross = xi * yj - xj * yi;
        a2 += cross;
        cx += (xi + xj) * cross;
        cy += (yi + yj) * cross;
    }
    let scale = pts
        .iter()
        .map(|p| (p.lon - x0).abs().max((p.lat - y0).abs()))
        .fold(0.0, f64::max);
    if a2.abs() <= 1e-14 * scale * scale {
        return Err(Error::DegeneratePolygon);
    }
    Coordinate::new(y0 + cy / (3.0 * a2), x0 + cx / (3.0 * a2))
}
