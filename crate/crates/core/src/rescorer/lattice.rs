use std::collections::BTreeMap;

/// Prefix trie over n-best token sequences. Node 0 is the root; every other
/// node is entered by exactly one arc carrying a token.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixLattice {
    nodes: Vec<Node>,
    /// Node at which each hypothesis ends, in n-best order.
    ends: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<usize>,
    pub token: Option<String>,
    pub depth: usize,
    pub children: BTreeMap<String, usize>,
    /// Hypotheses ending at this node (end markers).
    pub ends_here: Vec<usize>,
}

impl PrefixLattice {
    pub fn build<S: AsRef<[String]>>(hyps: &[S]) -> PrefixLattice {
        let mut nodes = vec![Node {
            parent: None,
            token: None,
            depth: 0,
            children: BTreeMap::new(),
            ends_here: Vec::new(),
        }];
        let mut ends = Vec::with_capacity(hyps.len());
        for (h, hyp) in hyps.iter().enumerate() {
            let mut cur = 0;
            for tok in hyp.as_ref() {
                cur = match nodes[cur].children.get(tok) {
                    Some(&next) => next,
                    None => {
                        let next = nodes.len();
                        let depth = nodes[cur].depth + 1;
                        nodes[cur].children.insert(tok.clone(), next);
                        nodes.push(Node {
                            parent: Some(cur),
                            token: Some(tok.clone()),
                            depth,
                            children: BTreeMap::new(),
                            ends_here: Vec::new(),
                        });
                        next
                    }
                };
            }
            nodes[cur].ends_here.push(h);
            ends.push(cur);
        }
        PrefixLattice { nodes, ends }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn arc_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn leaf_count(&self) -> usize {
        self.ends.len()
    }

    pub fn hypothesis_count(&self) -> usize {
        self.ends.len()
    }

    pub fn end_node(&self, hyp: usize) -> usize {
        self.ends[hyp]
    }

    /// Node indices from the first arc to `node`, root excluded.
    pub fn path_nodes(&self, node: usize) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.nodes[node].depth);
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            path.push(cur);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Token sequence of hypothesis `hyp`, read back from the trie.
    pub fn path(&self, hyp: usize) -> Vec<String> {
        self.path_nodes(self.ends[hyp])
            .into_iter()
            .map(|n| self.nodes[n].token.clone().expect("non-root node"))
            .collect()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}
