//! Small helpers shared by the LaTeX exporters.

/// Escapes the characters that are special in LaTeX text mode.
pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\textbackslash{}"),
            '&' | '%' | '$' | '#' | '_' | '{' | '}' => {
                out.push('\\');
                out.push(c);
            }
            '~' => out.push_str("\\textasciitilde{}"),
            '^' => out.push_str("\\textasciicircum{}"),
            _ => out.push(c),
        }
    }
    out
}

/// Formats an integer with comma thousands separators (`852433` -> `852,433`).
pub fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Renders a booktabs `table` with one `tabular`. Row groups are separated
/// by `\midrule`.
pub fn table(colspec: &str, header: &[String], groups: &[Vec<Vec<String>>], caption: &str) -> String {
    let mut out = String::new();
    out.push_str("\\begin{table}[ht]\n\\centering\n");
    out.push_str(&format!("\\begin{{tabular}}{{{colspec}}}\n\\toprule\n"));
    out.push_str(&header.join(" & "));
    out.push_str(" \\\\\n");
    for group in groups {
        out.push_str("\\midrule\n");
        for row in group {
            out.push_str(&row.join(" & "));
            out.push_str(" \\\\\n");
        }
    }
    out.push_str("\\bottomrule\n\\end{tabular}\n");
    out.push_str(&format!("\\caption{{{caption}}}\n\\end{{table}}\n"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_specials() {
        assert_eq!(escape("lgbtq_unspecified"), "lgbtq\\_unspecified");
        assert_eq!(escape("a & b 50%"), "a \\& b 50\\%");
    }

    #[test]
    fn thousands_grouping() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(1402), "1,402");
        assert_eq!(thousands(852433), "852,433");
        assert_eq!(thousands(1000000), "1,000,000");
    }
}
