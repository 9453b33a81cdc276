use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COCO17: &str = include_str!("../../data/coco17.toml");

/// Joint graph: vertices are joints, `edges` are bones, `parent` orients the
/// graph as a tree rooted at the single joint that is its own parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    name: String,
    num_joints: usize,
    edges: Vec<(usize, usize)>,
    parent: Vec<usize>,
    parent2: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TopologyDoc {
    name: String,
    num_joints: usize,
    parent: Vec<usize>,
    edges: Vec<[usize; 2]>,
}

impl Topology {
    pub fn new(
        name: impl Into<String>,
        num_joints: usize,
        edges: Vec<(usize, usize)>,
        parent: Vec<usize>,
    ) -> Result<Self> {
        let name = name.into();
        if num_joints == 0 {
            return Err(Error::Config("topology needs at least one joint".into()));
        }
        if parent.len() != num_joints {
            return Err(Error::Config(format!(
                "parent map has {} entries for {} joints",
                parent.len(),
                num_joints
            )));
        }
        let mut seen = HashSet::new();
        for &(i, j) in &edges {
            if i >= num_joints || j >= num_joints {
                return Err(Error::Config(format!("edge ({i}, {j}) out of range")));
            }
            if i == j {
                return Err(Error::Config(format!("self edge at joint {i}")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::Config(format!("duplicate edge ({i}, {j})")));
            }
        }
        if let Some(&p) = parent.iter().find(|&&p| p >= num_joints) {
            return Err(Error::Config(format!("parent index {p} out of range")));
        }
        let roots: Vec<usize> = (0..num_joints).filter(|&j| parent[j] == j).collect();
        if roots.len() != 1 {
            return Err(Error::Config(format!(
                "parent map must have exactly one root, found {}",
                roots.len()
            )));
        }
        let root = roots[0];
        for start in 0..num_joints {
            let mut j = start;
            let mut steps = 0;
            while j != root {
                j = parent[j];
                steps += 1;
                if steps >= num_joints {
                    return Err(Error::Config(format!(
                        "parent chain from joint {start} does not reach the root"
                    )));
                }
            }
        }
        let parent2 = parent.iter().map(|&p| parent[p]).collect();
        Ok(Topology {
            name,
            num_joints,
            edges,
            parent,
            parent2,
        })
    }

    /// The shipped 17-joint COCO-style layout.
    pub fn coco17() -> Self {
        Self::from_toml_str(COCO17).expect("bundled coco17 topology is valid")
    }

    /// Look up a shipped topology by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "coco17" => Some(Self::coco17()),
            _ => None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: TopologyDoc =
            toml::from_str(text).map_err(|e| Error::Format(format!("topology: {e}")))?;
        let edges = doc.edges.into_iter().map(|[i, j]| (i, j)).collect();
        Self::new(doc.name, doc.num_joints, edges, doc.parent)
    }

    pub fn to_toml_string(&self) -> String {
        let doc = TopologyDoc {
            name: self.name.clone(),
            num_joints: self.num_joints,
            parent: self.parent.clone(),
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
        };
        toml::to_string(&doc).expect("topology serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Random tree on `num_joints` joints plus up to `extra_edges` random
    /// non-tree edges. Joint 0 is the root.
    pub fn random<R: Rng + ?Sized>(num_joints: usize, extra_edges: usize, rng: &mut R) -> Self {
        assert!(num_joints > 0);
        let mut parent = vec![0usize; num_joints];
        let mut edges = Vec::new();
        let mut seen = HashSet::new();
        for j in 1..num_joints {
            let p = rng.random_range(0..j);
            parent[j] = p;
            edges.push((j, p));
            seen.insert((p, j));
        }
        if num_joints > 2 {
            for _ in 0..extra_edges {
                let i = rng.random_range(0..num_joints);
                let j = rng.random_range(0..num_joints);
                if i != j && seen.insert((i.min(j), i.max(j))) {
                    edges.push((i, j));
                }
            }
        }
        Self::new(format!("random{num_joints}"), num_joints, edges, parent)
            .expect("random tree is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn parent(&self) -> &[usize] {
        &self.parent
    }

    /// Two-hop ancestor of every joint; the root and its children map to the root.
    pub fn parent2(&self) -> &[usize] {
        &self.parent2
    }

    pub fn root(&self) -> usize {
        self.parent
            .iter()
            .enumerate()
            .find(|&(j, &p)| j == p)
            .map(|(j, _)| j)
            .expect("validated topology has a root")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn coco17_is_valid() {
        let t = Topology::coco17();
        assert_eq!(t.num_joints(), 17);
        assert_eq!(t.root(), 0);
        assert_eq!(t.parent2()[9], 5);
        assert_eq!(t.parent2()[5], 0);
        for j in 0..17 {
            assert_eq!(t.parent2()[j], t.parent()[t.parent()[j]]);
        }
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(Topology::new("x", 2, vec![(0, 0)], vec![0, 0]).is_err());
        assert!(Topology::new("x", 2, vec![(0, 1), (1, 0)], vec![0, 0]).is_err());
        assert!(Topology::new("x", 2, vec![(0, 2)], vec![0, 0]).is_err());
        // two roots
        assert!(Topology::new("x", 2, vec![], vec![0, 1]).is_err());
        // cycle 1 <-> 2 never reaches root 0
        assert!(Topology::new("x", 3, vec![], vec![0, 2, 1]).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let t = Topology::coco17();
        let back = Topology::from_toml_str(&t.to_toml_string()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn random_topologies_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in 1..20 {
            let t = Topology::random(v, 4, &mut rng);
            assert_eq!(t.num_joints(), v);
        }
    }
}
