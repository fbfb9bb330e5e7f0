/// Judge-style output equality: trailing whitespace on each line is
/// ignored, trailing blank lines are dropped, everything else must match.
pub fn compare_output(actual: &str, expected: &str) -> bool {
    normalized_lines(actual).eq(normalized_lines(expected))
}

fn normalized_lines(text: &str) -> impl Iterator<Item = &str> {
    let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    let keep = lines.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
    lines.into_iter().take(keep)
}
