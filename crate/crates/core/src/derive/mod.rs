//! Derived variables: entropy diversity, per-person daily VMT, and
//! household-to-facility distances.

mod geo;
mod io;
mod route;

pub use geo::{haversine_miles, polygon_centroid, Coordinate, EARTH_RADIUS_MILES};
pub use io::{read_facilities, read_road_graph, read_trips, read_zone_polygons, ModeMap};
pub use route::{nearest_distance, route_miles, DistanceMetric, RoadGraph};

use crate::{Error, Result};

/// Normalized entropy of household and three-tier employment shares,
/// `-sum(p ln p) / ln 4` with `0 ln 0 = 0`. Lies in [0, 1].
pub fn entropy_diversity(households: f64, basic: f64, retail: f64, service: f64) -> Result<f64> {
    let counts = [households, basic, retail, service];
    if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::InvalidValue {
            context: "diversity counts".into(),
            detail: format!("{counts:?} must be finite and non-negative"),
        });
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::UndefinedDiversity);
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.ln()
        })
        .sum();
    Ok((h / 4f64.ln()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TravelMode {
    PersonalMotorized,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub trip_id: String,
    pub person_id: String,
    pub mode: TravelMode,
    pub origin: Coordinate,
    pub destination: Coordinate,
    pub distance_miles: Option<f64>,
}

impl TripRecord {
    /// Fills in the distance with `metric` when not precomputed.
    pub fn resolve(&mut self, metric: &DistanceMetric) -> Result<()> {
        if self.distance_miles.is_none() {
            self.distance_miles = Some(metric.distance(self.origin, self.destination)?);
        }
        Ok(())
    }
}

/// Daily VMT of one person: total distance of personal motorized trips.
pub fn person_daily_vmt(trips: &[TripRecord]) -> Result<f64> {
    let mut total = 0.0;
    for t in trips {
        let d = t
            .distance_miles
            .ok_or_else(|| Error::UnresolvedTrip(t.trip_id.clone()))?;
        if !d.is_finite() || d < 0.0 {
            return Err(Error::InvalidValue {
                context: format!("trip {}", t.trip_id),
                detail: format!("distance {d}"),
            });
        }
        if t.mode == TravelMode::PersonalMotorized {
            total += d;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trip(mode: TravelMode, d: Option<f64>) -> TripRecord {
        let c = Coordinate::new(30.0, -97.0).unwrap();
        TripRecord {
            trip_id: "t".into(),
            person_id: "p".into(),
            mode,
            origin: c,
            destination: c,
            distance_miles: d,
        }
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_diversity(10.0, 10.0, 10.0, 10.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(entropy_diversity(10.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        // independent evaluation: shares (1/2, 1/4, 1/8, 1/8) give
        // H = 1/2 ln2 + 1/4 ln4 + 2 * 1/8 ln8 = (1/2 + 1/2 + 3/4) ln2 = 7/4 ln2
        // and ln4 = 2 ln2, so the index is 7/8.
        assert!((entropy_diversity(4.0, 2.0, 1.0, 1.0).unwrap() - 0.875).abs() < 1e-15);
        assert!(matches!(entropy_diversity(0.0, 0.0, 0.0, 0.0), Err(Error::UndefinedDiversity)));
    }

    #[test]
    fn vmt_counts_only_motorized_trips() {
        assert_eq!(person_daily_vmt(&[]).unwrap(), 0.0);
        let trips = [trip(TravelMode::PersonalMotorized, Some(5.0)), trip(TravelMode::Other, Some(3.0))];
        assert_eq!(person_daily_vmt(&trips).unwrap(), 5.0);
        let trips: Vec<_> = [2.5, 7.5, 10.0]
            .iter()
            .map(|d| trip(TravelMode::PersonalMotorized, Some(*d)))
            .collect();
        assert_eq!(person_daily_vmt(&trips).unwrap(), 20.0);
        assert!(matches!(
            person_daily_vmt(&[trip(TravelMode::Other, None)]),
            Err(Error::UnresolvedTrip(_))
        ));
    }
}
