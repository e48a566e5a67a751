// Instruction-box autocomplete. The vocabulary comes from two places:
// the grammar reference document (action verbs, keywords) and the live
// session's label map (segment names). No language model involved.

const KEYWORD_FALLBACK = [
    "from", "to", "between", "and", "by", "a", "factor", "of", "percent",
    "voxels", "mm", "measured", "the", "proximal", "distal", "end", "at",
    "point", "connecting", "gap", "in", "radius", "entire", "segment",
];

/**
 * Pull the action verbs out of the grammar document's synonym table
 * (rows like `| \`Thicken\` | thicken, widen, ... |`) plus the quoted
 * keywords of its EBNF block.
 */
export function extractGrammarTokens(markdown: string): string[] {
    const tokens = new Set<string>();
    for (const line of markdown.split("\n")) {
        const row = line.match(/^\|\s*`(\w+)`\s*\|([^|]+)\|/);
        if (row) {
            for (const verb of row[2]!.split(",")) {
                const w = verb.trim();
                if (/^[a-z]+$/.test(w)) {
                    tokens.add(w);
                }
            }
        }
        for (const quoted of line.matchAll(/"([a-z][a-z %]*)"/g)) {
            for (const w of quoted[1]!.split(/\s+/)) {
                if (/^[a-z]+$/.test(w)) {
                    tokens.add(w);
                }
            }
        }
    }
    for (const w of KEYWORD_FALLBACK) {
        tokens.add(w);
    }
    return [...tokens].sort();
}

/**
 * Complete the word under the cursor. Segment names from the label map
 * rank before grammar tokens; matching is case-insensitive prefix.
 */
export function suggest(
    text: string,
    cursor: number,
    grammarTokens: string[],
    labelMap: Record<string, string>,
    limit = 8,
): string[] {
    const head = text.slice(0, cursor);
    const m = head.match(/[A-Za-z0-9'-]+$/);
    const prefix = (m ? m[0] : "").toLowerCase();
    if (prefix === "") {
        return [];
    }
    const names = Object.values(labelMap);
    const hits: string[] = [];
    for (const name of names) {
        if (name.toLowerCase().startsWith(prefix)) {
            hits.push(name);
        }
    }
    for (const tok of grammarTokens) {
        if (tok.startsWith(prefix) && tok !== prefix) {
            hits.push(tok);
        }
    }
    return hits.slice(0, limit);
}
