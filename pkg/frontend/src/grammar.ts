// Client-side mirror of the situation-language grammar, used to validate
// task drafts before anything is sent:
//
//   Formula := Conj ("OR" Conj)*
//   Conj    := Atom ("AND" Atom)*
//   Atom    := "true" | "(" Formula ")" | Term RelName Term
//            | Ident "." AttrPath Cmp Literal
//   Term    := Ident | "?" Ident

export type Term =
  | { kind: "object"; id: string }
  | { kind: "variable"; name: string };

export type Formula =
  | { kind: "true" }
  | { kind: "relation"; relation: string; terms: [Term, Term] }
  | { kind: "attribute"; subject: string; path: string[]; comparator: string; value: number | string }
  | { kind: "and"; children: Formula[] }
  | { kind: "or"; children: Formula[] };

export class FormulaSyntaxError extends Error {
  constructor(
    message: string,
    public readonly position: number,
    public readonly expected: string = "",
  ) {
    super(`${message} at position ${position}${expected ? ` (expected ${expected})` : ""}`);
  }
}

interface Token {
  kind: "number" | "ident" | "string" | "cmp" | "punct" | "eof";
  text: string;
  position: number;
}

const TOKEN = /\s+|-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?|[A-Za-z_][A-Za-z0-9_]*|"(?:[^"\\]|\\.)*"|<=|>=|!=|[=<>]|≠|≤|≥|[().?]/y;
const UNICODE_CMP: Record<string, string> = { "≠": "!=", "≤": "<=", "≥": ">=" };

function tokenize(text: string): Token[] {
  const tokens: Token[] = [];
  let pos = 0;
  while (pos < text.length) {
    TOKEN.lastIndex = pos;
    const match = TOKEN.exec(text);
    if (!match || match.index !== pos) {
      throw new FormulaSyntaxError(`unexpected character ${JSON.stringify(text[pos])}`, pos);
    }
    const raw = match[0];
    if (!/^\s+$/.test(raw)) {
      let kind: Token["kind"];
      if (/^-?\d/.test(raw)) kind = "number";
      else if (/^[A-Za-z_]/.test(raw)) kind = "ident";
      else if (raw.startsWith('"')) kind = "string";
      else if (/^(<=|>=|!=|[=<>]|≠|≤|≥)$/.test(raw)) kind = "cmp";
      else kind = "punct";
      tokens.push({ kind, text: raw, position: pos });
    }
    pos += raw.length;
  }
  tokens.push({ kind: "eof", text: "", position: text.length });
  return tokens;
}

class Parser {
  private i = 0;

  constructor(private tokens: Token[]) {}

  private peek(): Token {
    return this.tokens[this.i]!;
  }

  private advance(): Token {
    return this.tokens[this.i++]!;
  }

  private expect(kind: Token["kind"], text?: string): Token {
    const tok = this.peek();
    if (tok.kind !== kind || (text !== undefined && tok.text !== text)) {
      throw new FormulaSyntaxError(`unexpected ${JSON.stringify(tok.text)}`, tok.position, text ?? kind);
    }
    return this.advance();
  }

  parse(): Formula {
    const formula = this.disjunction();
    const tok = this.peek();
    if (tok.kind !== "eof") {
      throw new FormulaSyntaxError(`trailing input ${JSON.stringify(tok.text)}`, tok.position, "end of formula");
    }
    return formula;
  }

  private disjunction(): Formula {
    const children = [this.conjunction()];
    while (this.peek().kind === "ident" && this.peek().text === "OR") {
      this.advance();
      children.push(this.conjunction());
    }
    return children.length === 1 ? children[0]! : { kind: "or", children };
  }

  private conjunction(): Formula {
    const children = [this.atom()];
    while (this.peek().kind === "ident" && this.peek().text === "AND") {
      this.advance();
      children.push(this.atom());
    }
    return children.length === 1 ? children[0]! : { kind: "and", children };
  }

  private atom(): Formula {
    const tok = this.peek();
    if (tok.kind === "punct" && tok.text === "(") {
      this.advance();
      const inner = this.disjunction();
      this.expect("punct", ")");
      return inner;
    }
    if (tok.kind === "ident" && tok.text === "true") {
      this.advance();
      return { kind: "true" };
    }
    if (tok.kind === "punct" && tok.text === "?") {
      return this.relationAtom(this.term());
    }
    if (tok.kind === "ident") {
      const ident = this.advance();
      const next = this.peek();
      if (next.kind === "punct" && next.text === ".") {
        return this.attributeAtom(ident);
      }
      return this.relationAtom({ kind: "object", id: ident.text });
    }
    throw new FormulaSyntaxError(`unexpected ${JSON.stringify(tok.text)}`, tok.position, "atom");
  }

  private term(): Term {
    const tok = this.peek();
    if (tok.kind === "punct" && tok.text === "?") {
      this.advance();
      return { kind: "variable", name: this.expect("ident").text };
    }
    if (tok.kind === "ident") {
      return { kind: "object", id: this.advance().text };
    }
    throw new FormulaSyntaxError(`unexpected ${JSON.stringify(tok.text)}`, tok.position, "term");
  }

  private relationAtom(first: Term): Formula {
    const rel = this.expect("ident");
    if (rel.text === "AND" || rel.text === "OR" || rel.text === "true") {
      throw new FormulaSyntaxError(`${JSON.stringify(rel.text)} is reserved`, rel.position, "relation name");
    }
    return { kind: "relation", relation: rel.text, terms: [first, this.term()] };
  }

  private attributeAtom(subject: Token): Formula {
    const path: string[] = [];
    while (this.peek().kind === "punct" && this.peek().text === ".") {
      this.advance();
      path.push(this.expect("ident").text);
    }
    const cmp = this.expect("cmp");
    const comparator = UNICODE_CMP[cmp.text] ?? cmp.text;
    return {
      kind: "attribute",
      subject: subject.text,
      path,
      comparator,
      value: this.literal(),
    };
  }

  private literal(): number | string {
    const tok = this.peek();
    if (tok.kind === "number") {
      this.advance();
      return Number(tok.text);
    }
    if (tok.kind === "string") {
      this.advance();
      return tok.text.slice(1, -1).replace(/\\"/g, '"').replace(/\\\\/g, "\\");
    }
    if (tok.kind === "ident") {
      this.advance();
      return tok.text;
    }
    throw new FormulaSyntaxError(`unexpected ${JSON.stringify(tok.text)}`, tok.position, "literal");
  }
}

export function parseFormula(text: string): Formula {
  const trimmed = text.trim();
  if (!trimmed) {
    throw new FormulaSyntaxError("empty formula", 0, "atom");
  }
  return new Parser(tokenize(trimmed)).parse();
}

export type DraftCheck =
  | { ok: true }
  | { ok: false; message: string; position: number; expected: string };

export function checkDraft(effect: string, precondition: string): DraftCheck & { field?: "effect" | "precondition" } {
  if (!effect.trim()) {
    return { ok: false, message: "effect is required", position: 0, expected: "atom", field: "effect" };
  }
  try {
    parseFormula(effect);
  } catch (err) {
    const e = err as FormulaSyntaxError;
    return { ok: false, message: e.message, position: e.position, expected: e.expected, field: "effect" };
  }
  if (precondition.trim()) {
    try {
      parseFormula(precondition);
    } catch (err) {
      const e = err as FormulaSyntaxError;
      return { ok: false, message: e.message, position: e.position, expected: e.expected, field: "precondition" };
    }
  }
  return { ok: true };
}
