//! Minimal CSV reading/writing: RFC-style quoting, mandatory header row,
//! shortest-round-trip decimals for numeric fields (f64 `Display`).

/// Quotes a field if it contains a comma, quote or newline.
pub fn escape_field(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn write_row(fields: &[String]) -> String {
    fields
        .iter()
        .map(|f| escape_field(f))
        .collect::<Vec<_>>()
        .join(",")
}

/// Splits one CSV record into fields, honouring quotes.
pub fn parse_row(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        if quoted {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    cur.push('"');
                } else {
                    quoted = false;
                }
            } else {
                cur.push(c);
            }
        } else {
            match c {
                '"' => quoted = true,
                ',' => {
                    fields.push(std::mem::take(&mut cur));
                }
                _ => cur.push(c),
            }
        }
    }
    fields.push(cur);
    fields
}

/// Shortest-round-trip decimal rendering of a float (`Display` on f64),
/// with canonical spellings for the non-finite values.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{x}")
    }
}

pub fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "NaN" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quoting_round_trip() {
        let fields = vec![
            "plain".to_string(),
            "with,comma".to_string(),
            "with \"quote\"".to_string(),
        ];
        let line = write_row(&fields);
        assert_eq!(parse_row(&line), fields);
    }

    proptest! {
        #[test]
        fn float_round_trip(x in proptest::num::f64::ANY) {
            let s = fmt_f64(x);
            let back = parse_f64(&s).unwrap();
            prop_assert!(back == x || (back.is_nan() && x.is_nan()));
        }

        #[test]
        fn row_round_trip(fields in proptest::collection::vec("[ -~]*", 1..6)) {
            let line = write_row(&fields);
            prop_assert_eq!(parse_row(&line), fields);
        }
    }
}
