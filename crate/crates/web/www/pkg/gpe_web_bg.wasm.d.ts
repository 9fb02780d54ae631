/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_density_rgba: (a: number) => [number, number];
export const demo_done: (a: number) => number;
export const demo_energy: (a: number) => number;
export const demo_gnorm: (a: number) => number;
export const demo_indicator: (a: number, b: number) => number;
export const demo_iterations: (a: number) => number;
export const demo_n: (a: number) => number;
export const demo_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const demo_reset: (a: number, b: bigint) => [number, number];
export const demo_step: (a: number, b: number) => [number, number, number];
export const indicator_threshold: () => number;
export const tolerance_schedule: (a: number, b: number, c: number) => [number, number, number, number];
export const __externref_table_alloc: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
