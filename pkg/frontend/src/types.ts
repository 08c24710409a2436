export type ItemStatus = 'pending' | 'claimed' | 'accepted' | 'corrected' | 'discarded';

export interface ReviewItem {
  id: string;
  queue: string;
  image_ref: string;
  question: string;
  annotation: string;
  status: ItemStatus;
  corrected_text: string | null;
  labeler: string | null;
  version: number;
  created_at: number;
  updated_at: number;
}

export interface QueueStats {
  pending: number;
  claimed: number;
  accepted: number;
  corrected: number;
  discarded: number;
  total: number;
}

export type DecisionAction = 'accept' | 'correct' | 'discard';

/** A decision as constructed by the UI: always carries the server-provided
 * expected_version of the item it was built from, plus a client-side id so
 * retries can never double-submit. */
export interface Decision {
  decisionId: string;
  itemId: string;
  action: DecisionAction;
  expectedVersion: number;
  correctedText?: string;
}

export interface SessionCounts {
  accepted: number;
  corrected: number;
  discarded: number;
}
