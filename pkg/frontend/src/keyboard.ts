// Keyboard-first triage: one key per action, vim-style movement plus
// arrows. Modified keys and keys typed into form fields pass through.

export type Command = "keep" | "remove" | "undo" | "next" | "prev";

const KEYMAP: Record<string, Command> = {
  k: "keep",
  x: "remove",
  u: "undo",
  j: "next",
  ArrowRight: "next",
  ArrowDown: "next",
  h: "prev",
  ArrowLeft: "prev",
  ArrowUp: "prev",
};

export interface KeyLike {
  key: string;
  ctrlKey?: boolean;
  metaKey?: boolean;
  altKey?: boolean;
  target?: { tagName?: string } | EventTarget | null;
}

export function commandFor(event: KeyLike): Command | null {
  if (event.ctrlKey || event.metaKey || event.altKey) return null;
  const tag = (event.target as { tagName?: string } | null | undefined)?.tagName?.toUpperCase();
  if (tag === "INPUT" || tag === "TEXTAREA" || tag === "SELECT") return null;
  return KEYMAP[event.key] ?? null;
}
