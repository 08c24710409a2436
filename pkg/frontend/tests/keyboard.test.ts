import { describe, expect, it } from 'vitest';

import { resolveShortcut } from '../src/keyboard';

describe('resolveShortcut', () => {
  it('maps the three decision keys', () => {
    expect(resolveShortcut({ key: 'a' })).toBe('accept');
    expect(resolveShortcut({ key: 'c' })).toBe('correct');
    expect(resolveShortcut({ key: 'd' })).toBe('discard');
    expect(resolveShortcut({ key: 'A' })).toBe('accept');
  });

  it('maps navigation keys', () => {
    expect(resolveShortcut({ key: 'n' })).toBe('next');
    expect(resolveShortcut({ key: 'e' })).toBe('focus-editor');
    expect(resolveShortcut({ key: 'r' })).toBe('retry');
    expect(resolveShortcut({ key: 'q' })).toBeNull();
  });

  it('ignores keys while typing in the editor', () => {
    const textarea = { tagName: 'TEXTAREA' };
    expect(resolveShortcut({ key: 'a', target: textarea })).toBeNull();
    expect(resolveShortcut({ key: 'd', target: { tagName: 'INPUT' } })).toBeNull();
  });

  it('submits a correction with ctrl+enter from the editor', () => {
    const textarea = { tagName: 'TEXTAREA' };
    expect(resolveShortcut({ key: 'Enter', target: textarea, ctrlKey: true })).toBe('correct');
    expect(resolveShortcut({ key: 'Enter', target: textarea })).toBeNull();
  });

  it('leaves modifier combos alone outside the editor', () => {
    expect(resolveShortcut({ key: 'a', metaKey: true })).toBeNull();
    expect(resolveShortcut({ key: 'a', ctrlKey: true })).toBeNull();
  });
});
