//! Packed network inputs: prompts shared by many queries.

/// One encoded-ready prompt: `n` high states (row-major) and their
/// original 1-based trajectory indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptInput {
    pub states: Vec<f64>,
    pub indices: Vec<usize>,
}

impl PromptInput {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// One decision: the last `k` low states (oldest first) under prompt
/// `prompt`, plus the goal used by the feedforward baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryInput {
    pub prompt: usize,
    pub lows: Vec<f64>,
    pub goal: Vec<f64>,
}

/// Per-layer prompt state computed once and reused across steps.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptCache {
    /// Keys and values of every prompt token, per layer (`n × d` each).
    Attention { n: usize, keys: Vec<Vec<f64>>, values: Vec<Vec<f64>> },
    /// Hidden and cell state after the prompt, per layer.
    Recurrent { h: Vec<Vec<f64>>, c: Vec<Vec<f64>> },
    None,
}

#[derive(Debug, Clone, Copy)]
pub enum PromptSlot<'a> {
    Input(&'a PromptInput),
    Cached(&'a PromptCache),
}

/// Queries grouped under their prompts.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub prompts: Vec<PromptSlot<'a>>,
    pub queries: Vec<QueryInput>,
}

impl Batch<'_> {
    pub fn n_queries(&self) -> usize {
        self.queries.len()
    }
}

/// Attention weights of the final token of one query: `[layer][head][key]`,
/// keys ordered prompt first, then the query's own low tokens.
pub type QueryAttention = Vec<Vec<Vec<f64>>>;
