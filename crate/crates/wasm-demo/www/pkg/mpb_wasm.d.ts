/* tslint:disable */
/* eslint-disable */

/**
 * Simulated 2-D fields with a known eigen-decomposition, a fitted model and
 * its principal components.
 */
export class FieldDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Noise-free field of one subject.
     */
    clean(subject: number): Float64Array;
    /**
     * Estimated eigenfunction `j` from the last FPCA run.
     */
    eigenfunction(j: number): Float64Array;
    /**
     * Fits a rank-`rank` model with the same penalty weight on both
     * dimensions and on the coefficients; returns the residual ratio.
     */
    fit(rank: number, lambda: number): number;
    /**
     * Fitted field of one subject.
     */
    fitted(subject: number): Float64Array;
    /**
     * Runs FPCA on the fitted model and returns the leading eigenvalues.
     */
    fpca(lambda: number, count: number): Float64Array;
    constructor(seed: bigint, subjects: number, points: number, noise_var: number);
    /**
     * Observed (noisy) field of one subject.
     */
    observed(subject: number): Float64Array;
    points(): number;
    subjects(): number;
    /**
     * Share of each estimated eigenfunction's norm inside the span of the
     * same number of true eigenfunctions.
     */
    subspace_capture(): Float64Array;
    /**
     * True eigenfunction `j`.
     */
    true_eigenfunction(j: number): Float64Array;
    /**
     * True score variances of the simulated fields.
     */
    true_eigenvalues(count: number): Float64Array;
}

/**
 * Values of every basis function on `points` equispaced points of `[0, 1]`,
 * laid out function-major (`rank` rows of `points`).
 */
export function basis_curves(kind: string, rank: number, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_fielddemo_free: (a: number, b: number) => void;
    readonly basis_curves: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly fielddemo_clean: (a: number, b: number) => [number, number];
    readonly fielddemo_eigenfunction: (a: number, b: number) => [number, number, number, number];
    readonly fielddemo_fit: (a: number, b: number, c: number) => [number, number, number];
    readonly fielddemo_fitted: (a: number, b: number) => [number, number, number, number];
    readonly fielddemo_fpca: (a: number, b: number, c: number) => [number, number, number, number];
    readonly fielddemo_new: (a: bigint, b: number, c: number, d: number) => [number, number, number];
    readonly fielddemo_observed: (a: number, b: number) => [number, number];
    readonly fielddemo_points: (a: number) => number;
    readonly fielddemo_subjects: (a: number) => number;
    readonly fielddemo_subspace_capture: (a: number) => [number, number, number, number];
    readonly fielddemo_true_eigenfunction: (a: number, b: number) => [number, number, number, number];
    readonly fielddemo_true_eigenvalues: (a: number, b: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
