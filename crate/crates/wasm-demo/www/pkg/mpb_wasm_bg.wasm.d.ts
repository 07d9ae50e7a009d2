/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_fielddemo_free: (a: number, b: number) => void;
export const basis_curves: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const fielddemo_clean: (a: number, b: number) => [number, number];
export const fielddemo_eigenfunction: (a: number, b: number) => [number, number, number, number];
export const fielddemo_fit: (a: number, b: number, c: number) => [number, number, number];
export const fielddemo_fitted: (a: number, b: number) => [number, number, number, number];
export const fielddemo_fpca: (a: number, b: number, c: number) => [number, number, number, number];
export const fielddemo_new: (a: bigint, b: number, c: number, d: number) => [number, number, number];
export const fielddemo_observed: (a: number, b: number) => [number, number];
export const fielddemo_points: (a: number) => number;
export const fielddemo_subjects: (a: number) => number;
export const fielddemo_subspace_capture: (a: number) => [number, number, number, number];
export const fielddemo_true_eigenfunction: (a: number, b: number) => [number, number, number, number];
export const fielddemo_true_eigenvalues: (a: number, b: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
