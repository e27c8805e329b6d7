//! Immutable sparse bipartite graph in CSR form, both directions.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{InteractionDataset, SplitTag};
use crate::error::{Error, Result};

/// User-item interaction graph with binary adjacency.
///
/// Neighbor lists are sorted ascending and deduplicated, which fixes the
/// iteration order everywhere downstream (clustering in particular).
#[derive(Clone, Debug)]
pub struct BipartiteGraph {
    n_users: usize,
    n_items: usize,
    user_offsets: Vec<usize>,
    user_nbrs: Vec<u32>,
    item_offsets: Vec<usize>,
    item_nbrs: Vec<u32>,
    m: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    User,
    Item,
}

impl BipartiteGraph {
    /// Builds the graph from the train split. Duplicate pairs collapse to a
    /// single edge.
    pub fn from_dataset(ds: &InteractionDataset) -> Result<Self> {
        if !ds.is_split() {
            return Err(Error::InvalidArgument("dataset is not split".into()));
        }
        let edges: Vec<(u32, u32)> = ds
            .split_records(SplitTag::Train)
            .map(|r| (r.user, r.item))
            .collect();
        Self::from_edges(ds.n_users(), ds.n_items(), edges)
    }

    /// Builds from an explicit edge list; duplicates are collapsed.
    pub fn from_edges(n_users: usize, n_items: usize, mut edges: Vec<(u32, u32)>) -> Result<Self> {
        for &(u, i) in &edges {
            if u as usize >= n_users {
                return Err(Error::IdOutOfRange { kind: "user", id: u as usize, size: n_users });
            }
            if i as usize >= n_items {
                return Err(Error::IdOutOfRange { kind: "item", id: i as usize, size: n_items });
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let m = edges.len();

        let mut user_offsets = vec![0usize; n_users + 1];
        for &(u, _) in &edges {
            user_offsets[u as usize + 1] += 1;
        }
        for k in 0..n_users {
            user_offsets[k + 1] += user_offsets[k];
        }
        let user_nbrs: Vec<u32> = edges.iter().map(|&(_, i)| i).collect();

        let mut item_offsets = vec![0usize; n_items + 1];
        for &(_, i) in &edges {
            item_offsets[i as usize + 1] += 1;
        }
        for k in 0..n_items {
            item_offsets[k + 1] += item_offsets[k];
        }
        let mut cursor = item_offsets.clone();
        let mut item_nbrs = vec![0u32; m];
        for &(u, i) in &edges {
            item_nbrs[cursor[i as usize]] = u;
            cursor[i as usize] += 1;
        }
        // edges sorted by (u, i) means each item's user list comes out sorted

        Ok(BipartiteGraph {
            n_users,
            n_items,
            user_offsets,
            user_nbrs,
            item_offsets,
            item_nbrs,
            m,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Number of distinct edges.
    pub fn n_edges(&self) -> usize {
        self.m
    }

    /// Items interacted with by `u`, sorted ascending.
    pub fn user_neighbors(&self, u: usize) -> &[u32] {
        &self.user_nbrs[self.user_offsets[u]..self.user_offsets[u + 1]]
    }

    /// Users who interacted with `i`, sorted ascending.
    pub fn item_neighbors(&self, i: usize) -> &[u32] {
        &self.item_nbrs[self.item_offsets[i]..self.item_offsets[i + 1]]
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_offsets[u + 1] - self.user_offsets[u]
    }

    pub fn item_degree(&self, i: usize) -> usize {
        self.item_offsets[i + 1] - self.item_offsets[i]
    }

    /// One-hop neighbor pattern of a node, i.e. its sorted neighbor list read
    /// as a binary indicator vector over the opposite side.
    pub fn neighbor_signature(&self, side: Side, id: usize) -> Result<Signature<'_>> {
        match side {
            Side::User => {
                if id >= self.n_users {
                    return Err(Error::IdOutOfRange { kind: "user", id, size: self.n_users });
                }
                Ok(Signature { dim: self.n_items, ones: self.user_neighbors(id) })
            }
            Side::Item => {
                if id >= self.n_items {
                    return Err(Error::IdOutOfRange { kind: "item", id, size: self.n_items });
                }
                Ok(Signature { dim: self.n_users, ones: self.item_neighbors(id) })
            }
        }
    }

    /// Writes the edge list as `u<TAB>i` lines sorted by (u, i).
    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for u in 0..self.n_users {
            for &i in self.user_neighbors(u) {
                writeln!(w, "{u}\t{i}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Sparse binary vector: positions of the one entries in a `dim`-long vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Signature<'a> {
    pub dim: usize,
    pub ones: &'a [u32],
}

impl Signature<'_> {
    pub fn to_dense(&self) -> Vec<u8> {
        let mut v = vec![0u8; self.dim];
        for &j in self.ones {
            v[j as usize] = 1;
        }
        v
    }
}
