import type { DecisionAction } from './types';

export type ShortcutAction = DecisionAction | 'next' | 'focus-editor' | 'retry';

/** Keyboard map for the three decisions plus navigation. */
export const SHORTCUTS: Record<string, ShortcutAction> = {
  a: 'accept',
  c: 'correct',
  d: 'discard',
  n: 'next',
  e: 'focus-editor',
  r: 'retry',
};

/** Resolve a keydown to an action; typing in an input/textarea is left alone. */
export function resolveShortcut(event: {
  key: string;
  target?: unknown;
  metaKey?: boolean;
  ctrlKey?: boolean;
  altKey?: boolean;
}): ShortcutAction | null {
  if (event.metaKey || event.altKey) return null;
  const target = event.target as { tagName?: string } | undefined;
  const tag = target?.tagName?.toUpperCase();
  if (tag === 'INPUT' || tag === 'TEXTAREA') {
    // Ctrl+Enter submits the correction from inside the editor.
    if (event.ctrlKey && event.key === 'Enter') return 'correct';
    return null;
  }
  if (event.ctrlKey) return null;
  return SHORTCUTS[event.key.toLowerCase()] ?? null;
}
