use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use super::geo::{haversine_miles, Coordinate};
use crate::{Error, Result};

/// Undirected road network with positive edge lengths in miles.
#[derive(Debug, Clone, Default)]
pub struct RoadGraph {
    /// Node ids in ascending order; position is the internal index.
    ids: Vec<u64>,
    coords: Vec<Coordinate>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl RoadGraph {
    pub fn new(nodes: &[(u64, Coordinate)], edges: &[(u64, u64, f64)]) -> Result<Self> {
        let sorted: BTreeMap<u64, Coordinate> = nodes.iter().copied().collect();
        if sorted.len() != nodes.len() {
            return Err(Error::invalid("duplicate node id in road graph"));
        }
        let ids: Vec<u64> = sorted.keys().copied().collect();
        let coords: Vec<Coordinate> = sorted.values().copied().collect();
        let mut adjacency = vec![Vec::new(); ids.len()];
        for &(u, v, len) in edges {
            if !(len.is_finite() && len > 0.0) {
                return Err(Error::InvalidValue {
                    context: format!("edge ({u}, {v})"),
                    detail: format!("length {len} must be positive"),
                });
            }
            let find = |id: u64| {
                ids.binary_search(&id)
                    .map_err(|_| Error::invalid(format!("edge endpoint {id} is not a node")))
            };
            let (a, b) = (find(u)?, find(v)?);
            adjacency[a].push((b, len));
            adjacency[b].push((a, len));
        }
        Ok(RoadGraph {
            ids,
            coords,
            adjacency,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn node_ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn coordinate(&self, id: u64) -> Option<Coordinate> {
        self.ids.binary_search(&id).ok().map(|i| self.coords[i])
    }

    /// Nearest node by haversine distance; ties go to the lowest id.
    pub fn snap(&self, p: Coordinate) -> Result<u64> {
        if self.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let mut best = (0usize, f64::INFINITY);
        for (i, c) in self.coords.iter().enumerate() {
            let d = haversine_miles(p, *c);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(self.ids[best.0])
    }

    /// Dijkstra shortest-path length between two node ids.
    pub fn shortest_path(&self, from: u64, to: u64) -> Result<f64> {
        let idx = |id: u64| {
            self.ids
                .binary_search(&id)
                .map_err(|_| Error::invalid(format!("unknown node {id}")))
        };
        let (s, t) = (idx(from)?, idx(to)?);
        let mut dist = vec![f64::INFINITY; self.ids.len()];
        let mut heap = BinaryHeap::new();
        dist[s] = 0.0;
        heap.push(State { cost: 0.0, node: s });
        while let Some(State { cost, node }) = heap.pop() {
            if node == t {
                return Ok(cost);
            }
            if cost > dist[node] {
                continue;
            }
            for &(next, len) in &self.adjacency[node] {
                let c = cost + len;
                if c < dist[next] {
                    dist[next] = c;
                    heap.push(State { cost: c, node: next });
                }
            }
        }
        Err(Error::Unreachable { from, to })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct State {
    cost: f64,
    node: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, then node index
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest network distance between the nodes nearest to `origin` and
/// `destination`.
pub fn route_miles(graph: &RoadGraph, origin: Coordinate, destination: Coordinate) -> Result<f64> {
    let a = graph.snap(origin)?;
    let b = graph.snap(destination)?;
    graph.shortest_path(a, b)
}

#[derive(Debug, Clone, Copy)]
pub enum DistanceMetric<'a> {
    Haversine,
    Route(&'a RoadGraph),
}

impl DistanceMetric<'_> {
    pub fn distance(&self, a: Coordinate, b: Coordinate) -> Result<f64> {
        match self {
            DistanceMetric::Haversine => Ok(haversine_miles(a, b)),
            DistanceMetric::Route(g) => route_miles(g, a, b),
        }
    }
}

/// Distance from `point` to the closest of `facilities`.
pub fn nearest_distance(point: Coordinate, facilities: &[Coordinate], metric: &DistanceMetric) -> Result<f64> {
    if facilities.is_empty() {
        return Err(Error::invalid("facility list is empty"));
    }
    let mut best = f64::INFINITY;
    for f in facilities {
        best = best.min(metric.distance(point, *f)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(lat: f64, lon: f64) -> Coordinate {
        Coordinate::new(lat, lon).unwrap()
    }

    fn line_graph() -> RoadGraph {
        RoadGraph::new(
            &[(1, c(0.0, 0.0)), (2, c(0.0, 1.0)), (3, c(0.0, 2.0))],
            &[(1, 2, 1.0), (2, 3, 1.0), (1, 3, 3.0)],
        )
        .unwrap()
    }

    #[test]
    fn single_edge() {
        let g = RoadGraph::new(&[(1, c(0.0, 0.0)), (2, c(0.0, 1.0))], &[(1, 2, 4.0)]).unwrap();
        assert_eq!(route_miles(&g, c(0.0, 0.0), c(0.0, 1.0)).unwrap(), 4.0);
    }

    #[test]
    fn triangle_takes_two_short_edges() {
        assert_eq!(route_miles(&line_graph(), c(0.0, 0.0), c(0.0, 2.0)).unwrap(), 2.0);
    }

    #[test]
    fn errors() {
        let g = RoadGraph::new(&[(1, c(0.0, 0.0)), (2, c(0.0, 1.0))], &[]).unwrap();
        assert!(matches!(
            route_miles(&g, c(0.0, 0.0), c(0.0, 1.0)),
            Err(Error::Unreachable { from: 1, to: 2 })
        ));
        let empty = RoadGraph::default();
        assert!(matches!(route_miles(&empty, c(0.0, 0.0), c(0.0, 1.0)), Err(Error::EmptyGraph)));
        assert!(RoadGraph::new(&[(1, c(0.0, 0.0))], &[(1, 2, 1.0)]).is_err());
        assert!(RoadGraph::new(&[(1, c(0.0, 0.0)), (2, c(1.0, 0.0))], &[(1, 2, 0.0)]).is_err());
    }

    #[test]
    fn snap_ties_go_to_lowest_id() {
        let g = RoadGraph::new(&[(9, c(0.0, 1.0)), (4, c(0.0, -1.0))], &[(4, 9, 1.0)]).unwrap();
        assert_eq!(g.snap(c(0.0, 0.0)).unwrap(), 4);
    }

    #[test]
    fn nearest_distance_examples() {
        let p = c(30.0, -97.0);
        assert_eq!(nearest_distance(p, &[p], &DistanceMetric::Haversine).unwrap(), 0.0);
        assert!(nearest_distance(p, &[], &DistanceMetric::Haversine).is_err());
    }
}
