// Keyboard-first interaction: 1 picks the left candidate, 2 the right.
// Pure mapping functions so the behaviour is unit-testable without a DOM.

import { Choice } from "./api.js";

export function choiceForKey(key: string): Choice | null {
  if (key === "1") return "a";
  if (key === "2") return "b";
  return null;
}

/** True when the event originates from a text field, where digits are
 * input rather than commands. */
export function shouldIgnoreTarget(target: unknown): boolean {
  const tag =
    target && typeof target === "object" && "tagName" in target
      ? String((target as { tagName: unknown }).tagName).toUpperCase()
      : "";
  return tag === "INPUT" || tag === "TEXTAREA" || tag === "SELECT";
}

export function bindKeyboard(
  doc: Pick<Document, "addEventListener">,
  onChoice: (side: Choice) => void,
): void {
  doc.addEventListener("keydown", (event) => {
    const e = event as KeyboardEvent;
    if (shouldIgnoreTarget(e.target)) return;
    const side = choiceForKey(e.key);
    if (side !== null) {
      e.preventDefault();
      onChoice(side);
    }
  });
}
