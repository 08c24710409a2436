import { ApiError, NetworkError, type ReviewApi } from './api';
import type { Decision, DecisionAction, QueueStats, ReviewItem, SessionCounts } from './types';

export type Phase = 'idle' | 'reviewing' | 'submitting' | 'empty' | 'conflict';

export interface SessionState {
  labeler: string;
  queue: string;
  phase: Phase;
  /** Mirror of the server's item; its version is always the server-provided one. */
  current: ReviewItem | null;
  /** The labeler's editable annotation text; survives conflicts and reloads. */
  editBuffer: string;
  stats: QueueStats | null;
  statsStale: boolean;
  counts: SessionCounts;
  buffered: Decision[];
  notice: string | null;
}

export interface SessionOptions {
  queue?: string;
  /** Offline decisions kept at most this many; more must fail loudly. */
  bufferLimit?: number;
  makeId?: () => string;
}

let idCounter = 0;
const defaultMakeId = () => `d-${Date.now().toString(36)}-${(idCounter++).toString(36)}`;

/** Drives one labeler's review loop against the service.
 *
 * Claims an item, exposes it for display with an editable annotation,
 * submits accept / correct / discard with the item's server version, and
 * auto-claims the next item. Conflicts reload the item but keep the edit
 * buffer; network failures buffer the decision for retry with a client-side
 * id so a retry can never double-submit.
 */
export class ReviewSession {
  readonly state: SessionState;
  private readonly bufferLimit: number;
  private readonly makeId: () => string;
  private readonly submittedIds = new Set<string>();
  private readonly listeners = new Set<(state: SessionState) => void>();

  constructor(
    private readonly api: ReviewApi,
    labeler: string,
    options: SessionOptions = {},
  ) {
    this.bufferLimit = options.bufferLimit ?? 20;
    this.makeId = options.makeId ?? defaultMakeId;
    this.state = {
      labeler,
      queue: options.queue ?? 'ocr',
      phase: 'idle',
      current: null,
      editBuffer: '',
      stats: null,
      statsStale: false,
      counts: { accepted: 0, corrected: 0, discarded: 0 },
      buffered: [],
      notice: null,
    };
  }

  onChange(listener: (state: SessionState) => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  setEditBuffer(text: string): void {
    this.state.editBuffer = text;
    this.emit();
  }

  get editDiffers(): boolean {
    return this.state.current !== null && this.state.editBuffer !== this.state.current.annotation;
  }

  async claimNext(): Promise<ReviewItem | null> {
    this.state.notice = null;
    const item = await this.api.claimNext(this.state.queue);
    if (item === null) {
      this.state.phase = 'empty';
      this.state.current = null;
      this.state.editBuffer = '';
    } else {
      this.state.phase = 'reviewing';
      this.state.current = item;
      this.state.editBuffer = item.annotation;
    }
    this.emit();
    return item;
  }

  accept(): Promise<void> {
    return this.decide('accept');
  }

  discard(): Promise<void> {
    return this.decide('discard');
  }

  /** Submit the edit buffer as the corrected annotation. */
  correct(): Promise<void> {
    return this.decide('correct');
  }

  private async decide(action: DecisionAction): Promise<void> {
    const item = this.state.current;
    if (item === null || this.state.phase === 'submitting') return;
    if (action === 'correct' && this.state.editBuffer.trim() === '') {
      this.state.notice = 'corrected text must not be empty';
      this.emit();
      return;
    }
    const decision: Decision = {
      decisionId: this.makeId(),
      itemId: item.id,
      action,
      expectedVersion: item.version, // always the server-provided version
      ...(action === 'correct' ? { correctedText: this.state.editBuffer } : {}),
    };
    this.state.phase = 'submitting';
    this.emit();
    await this.submit(decision, true);
  }

  private async submit(decision: Decision, advance: boolean): Promise<void> {
    if (this.submittedIds.has(decision.decisionId)) return; // dedupe: never twice
    try {
      await this.api.submitDecision(decision);
    } catch (err) {
      await this.handleSubmitError(decision, err);
      return;
    }
    this.submittedIds.add(decision.decisionId);
    this.state.counts[decision.action === 'accept' ? 'accepted' : decision.action === 'correct' ? 'corrected' : 'discarded'] += 1;
    await this.refreshStats(); // stats refresh after every decision
    if (advance) {
      await this.claimNext();
    } else {
      this.emit();
    }
  }

  private async handleSubmitError(decision: Decision, err: unknown): Promise<void> {
    if (err instanceof NetworkError) {
      // Buffer and surface; the decision is never silently dropped.
      if (this.state.buffered.length >= this.bufferLimit) {
        this.state.phase = 'reviewing';
        this.state.notice = `offline buffer full (${this.bufferLimit}); reconnect before deciding more items`;
        this.emit();
        return;
      }
      this.state.buffered.push(decision);
      this.state.phase = 'reviewing';
      this.state.notice = `offline: decision buffered (${this.state.buffered.length} pending retry)`;
      this.emit();
      return;
    }
    if (err instanceof ApiError && err.status === 409) {
      // Someone mutated the item; reload it and re-prompt. The labeler's
      // edits stay in the buffer.
      await this.reloadAfterConflict(decision.itemId);
      return;
    }
    if (err instanceof ApiError) {
      this.state.phase = 'reviewing';
      this.state.notice = err.message; // every 4xx surfaces to the labeler
      this.emit();
      return;
    }
    throw err;
  }

  private async reloadAfterConflict(itemId: string): Promise<void> {
    const keptEdit = this.state.editBuffer;
    let fresh: ReviewItem | null = null;
    try {
      fresh = await this.api.getItem(itemId);
    } catch {
      fresh = null;
    }
    this.state.editBuffer = keptEdit;
    if (fresh !== null && fresh.status === 'claimed' && fresh.labeler === this.state.labeler) {
      this.state.current = fresh; // version re-synced to the server's
      this.state.phase = 'conflict';
      this.state.notice = `item changed to version ${fresh.version} while you were editing; please re-confirm`;
      this.emit();
      return;
    }
    // Claimed away or already decided elsewhere: move on, loudly.
    this.state.current = fresh;
    this.state.phase = 'conflict';
    this.state.notice = 'this item was taken over or decided elsewhere; claim the next one';
    this.emit();
  }

  /** Re-confirm after a conflict: resubmit against the reloaded version. */
  async confirmAfterConflict(action: DecisionAction): Promise<void> {
    if (this.state.phase !== 'conflict' || this.state.current === null) return;
    this.state.phase = 'reviewing';
    await this.decide(action);
  }

  /** Retry buffered decisions in order; stop at the first network failure. */
  async retryBuffered(): Promise<number> {
    let flushed = 0;
    while (this.state.buffered.length > 0) {
      const decision = this.state.buffered[0]!;
      if (this.submittedIds.has(decision.decisionId)) {
        this.state.buffered.shift();
        continue;
      }
      try {
        await this.api.submitDecision(decision);
      } catch (err) {
        if (err instanceof NetworkError) break; // still offline, keep the rest
        this.state.buffered.shift();
        if (err instanceof ApiError) {
          this.state.notice = `buffered decision for ${decision.itemId} rejected: ${err.message}`;
          continue;
        }
        throw err;
      }
      this.submittedIds.add(decision.decisionId);
      this.state.buffered.shift();
      this.state.counts[decision.action === 'accept' ? 'accepted' : decision.action === 'correct' ? 'corrected' : 'discarded'] += 1;
      flushed += 1;
    }
    if (flushed > 0) await this.refreshStats();
    this.emit();
    return flushed;
  }

  async refreshStats(): Promise<void> {
    try {
      this.state.stats = await this.api.stats(this.state.queue);
      this.state.statsStale = false;
    } catch {
      this.state.statsStale = true; // keep previous numbers, badge them stale
    }
    this.emit();
  }

  /** Decisions this labeler completed in this session. */
  get throughput(): number {
    const { accepted, corrected, discarded } = this.state.counts;
    return accepted + corrected + discarded;
  }

  /** Queue progress as done / total, for the stats panel. */
  get progress(): { done: number; total: number } {
    const stats = this.state.stats;
    if (stats === null) return { done: 0, total: 0 };
    return { done: stats.accepted + stats.corrected + stats.discarded, total: stats.total };
  }
}
