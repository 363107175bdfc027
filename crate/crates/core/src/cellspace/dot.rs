use std::fmt::Write;

use super::CellSpec;

/// Renders the cell DAG as a Graphviz digraph: lookback inputs, one node per
/// operator, an `add` node per block, and a final `cell-output` node fed by
/// every unused block (through a `concat` node when more than one).
pub fn cell_to_dot(cell: &CellSpec, title: Option<&str>) -> String {
    let mut out = String::new();
    let views = cell.dag_views();
    out.push_str("digraph cell {\n  rankdir=TB;\n");
    if let Some(t) = title {
        let _ = writeln!(out, "  label=\"{}\";", t.replace('"', "'"));
    }
    for lb in views.lookbacks_used.iter().rev() {
        let _ = writeln!(out, "  \"in{}\" [label=\"{}\", shape=box];", -lb, lb);
    }
    for (j, block) in cell.blocks().iter().enumerate() {
        let add = format!("b{j}_add");
        let _ = writeln!(out, "  \"{add}\" [label=\"add\", shape=circle];");
        for (side, (input, op)) in block.pairs().into_iter().enumerate() {
            let node = format!("b{j}_op{side}");
            let _ = writeln!(out, "  \"{node}\" [label=\"{}\"];", op.token());
            let source = if input < 0 {
                format!("in{}", -input)
            } else {
                format!("b{input}_add")
            };
            let _ = writeln!(out, "  \"{source}\" -> \"{node}\";");
            let _ = writeln!(out, "  \"{node}\" -> \"{add}\";");
        }
    }
    out.push_str("  \"out\" [label=\"cell-output\", shape=box];\n");
    if views.unused.len() > 1 {
        out.push_str("  \"concat\" [label=\"concat\", shape=box];\n");
        for j in &views.unused {
            let _ = writeln!(out, "  \"b{j}_add\" -> \"concat\";");
        }
        out.push_str("  \"concat\" -> \"out\";\n");
    } else if let Some(j) = views.unused.iter().next() {
        let _ = writeln!(out, "  \"b{j}_add\" -> \"out\";");
    } else {
        for lb in &views.lookbacks_used {
            let _ = writeln!(out, "  \"in{}\" -> \"out\";", -lb);
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_single_block_cell() {
        let cell = CellSpec::parse("[(-2, 'gru', -1, '21 conv')]").unwrap();
        let dot = cell_to_dot(&cell, None);
        for label in ["label=\"gru\"", "label=\"21 conv\"", "label=\"add\"", "label=\"cell-output\""] {
            assert!(dot.contains(label), "{label} missing in\n{dot}");
        }
        assert!(dot.starts_with("digraph cell {"));
        assert!(!dot.contains("concat"));
    }

    #[test]
    fn concatenates_multiple_unused_blocks() {
        let cell = CellSpec::parse("[(-1, 'gru', -1, 'gru');(-2, 'lstm', -2, 'lstm')]").unwrap();
        let dot = cell_to_dot(&cell, Some("M=3 N=2 F=24"));
        assert!(dot.contains("\"b0_add\" -> \"concat\""));
        assert!(dot.contains("\"b1_add\" -> \"concat\""));
        assert!(dot.contains("label=\"M=3 N=2 F=24\""));
    }
}
